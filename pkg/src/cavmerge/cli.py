"""Command-line entry: scenario config parsing, runs, exports and worked examples.

Config files are UTF-8 ``key = value`` lines with ``#`` comments.  Exit codes:
0 success, 1 configuration error, 2 planner infeasibility.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .baseline import run_baseline
from .constrained import algorithm1, algorithm2
from .metrics import FuelCoeffs, fuel_rate, summarize
from .model import (
    CavMergeError,
    InfeasibleError,
    Lane,
    ScenarioParams,
    alpha_to_beta,
    beta_to_alpha,
)
from .safety import gaps
from .sim import SimulationError, generate_arrivals, run
from .unconstrained import solve_case_a, solve_case_b, solve_case_b_matched_speed


class ConfigError(CavMergeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    L: float
    phi: float
    delta: float
    v_min: float
    v_max: float
    u_min: float
    u_max: float
    arrival_rate_per_lane: float
    rng_seed: int
    horizon: float
    output_dir: str
    alpha: Optional[float] = None
    beta: Optional[float] = None
    zeta: Optional[float] = None
    sample_dt: float = 0.1
    fuel_file: Optional[str] = None
    baseline: bool = False

    def __post_init__(self):
        if (self.alpha is None) == (self.beta is None):
            raise ConfigError("exactly one of alpha and beta must be given")
        if not self.sample_dt > 0:
            raise ConfigError("sample_dt must be > 0")
        if not self.horizon > 0:
            raise ConfigError("horizon must be > 0")

    @property
    def resolved_beta(self) -> float:
        if self.beta is not None:
            return self.beta
        return alpha_to_beta(self.alpha, self.u_min, self.u_max)

    def scenario(self) -> ScenarioParams:
        try:
            return ScenarioParams(
                L=self.L,
                phi=self.phi,
                delta=self.delta,
                v_min=self.v_min,
                v_max=self.v_max,
                u_min=self.u_min,
                u_max=self.u_max,
                beta=self.resolved_beta,
                zeta=self.zeta,
                arrival_rate_per_lane=self.arrival_rate_per_lane,
                rng_seed=self.rng_seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


_OPTIONAL = {"alpha", "beta", "zeta", "sample_dt", "fuel_file", "baseline"}
_KINDS = {f.name: f.type for f in fields(RunConfig)}
_INT_KEYS = {"rng_seed"}
_STR_KEYS = {"output_dir", "fuel_file"}
_BOOL_KEYS = {"baseline"}


def _convert(key, raw, lineno):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _STR_KEYS:
            return raw
        if key in _BOOL_KEYS:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {key}") from None


def parse_config(text: str) -> RunConfig:
    """Strict parser: unknown keys, duplicates and type mismatches are errors."""
    values = {}
    where = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KINDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {where[key]})")
        values[key] = _convert(key, val, lineno)
        where[key] = lineno
    if "alpha" in values and "beta" in values:
        raise ConfigError(
            f"alpha (line {where['alpha']}) and beta (line {where['beta']}) conflict; give exactly one"
        )
    required = [f.name for f in fields(RunConfig) if f.name not in _OPTIONAL]
    missing = [k for k in required if k not in values]
    if "alpha" not in values and "beta" not in values:
        missing.append("alpha|beta")
    if missing:
        raise ConfigError("missing required keys: " + ", ".join(missing))
    return RunConfig(**values)


def serialize(config: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        val = getattr(config, f.name)
        if val is None:
            continue
        if isinstance(val, bool):
            text = "true" if val else "false"
        elif isinstance(val, float):
            text = repr(val)
        else:
            text = str(val)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


# --- exports --------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.9g}"


def _write(path: Path, rows) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(",".join(r) + "\n")
    return path


def _sample_times(t0, t_m, dt):
    n = int(math.floor((t_m - t0) / dt + 1e-9))
    return t0 + dt * np.arange(n + 1)


def export(sim_result, config: RunConfig, baseline=None) -> list:
    """Write trajectories.csv, events.csv, metrics.txt and per-vehicle plot data."""
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    p = sim_result.params
    records = sorted(sim_result.records, key=lambda r: r.id)
    prev_same = {}
    last = {}
    for r in sorted(sim_result.records, key=lambda r: (r.t0, r.id)):
        prev_same[r.id] = last.get(r.lane)
        last[r.lane] = r
    written = []

    rows = [["cav_id", "lane", "t", "x", "v", "u", "slack_pred"]]
    for r in records:
        tr = r.trajectory
        ts = _sample_times(tr.t0, tr.t_m, config.sample_dt)
        x, v, u = tr.states(ts)
        lead = prev_same[r.id]
        sl = [None] * len(ts)
        if lead is not None:
            sl = gaps(tr, lead.trajectory.with_hold(math.inf), ts, p.phi, p.delta).tolist()
        for k in range(len(ts)):
            rows.append([str(r.id), r.lane.value, _fmt(ts[k]), _fmt(x[k]), _fmt(v[k]), _fmt(u[k]), _fmt(sl[k])])
    written.append(_write(out / "trajectories.csv", rows))

    ev = [["event", "cav_id", "lane", "t", "value"]]
    for r in records:
        tr = r.trajectory
        ev.append(["arrival", str(r.id), r.lane.value, _fmt(r.t0), _fmt(r.v0)])
        if r.t1 is not None:
            ev.append(["t1", str(r.id), r.lane.value, _fmt(r.t1), r.plan_kind])
        if r.t2 is not None:
            ev.append(["t2", str(r.id), r.lane.value, _fmt(r.t2), r.plan_kind])
        ev.append(["crossing", str(r.id), r.lane.value, _fmt(tr.t_m), _fmt(tr.terminal_speed)])
    written.append(_write(out / "events.csv", ev))

    coeffs = FuelCoeffs.from_file(config.fuel_file) if config.fuel_file else FuelCoeffs.default()
    m = summarize(sim_result, coeffs, p.beta)
    lines = [
        f"beta = {_fmt(p.beta)}",
        f"alpha = {_fmt(beta_to_alpha(p.beta, p.u_min, p.u_max))}",
        f"vehicles = {len(records)}",
        f"rejected_arrivals = {sim_result.rejected}",
        f"resampled_speeds = {sim_result.resampled}",
        f"min_safety_slack = {_fmt(sim_result.min_safety_slack)}",
        f"min_merging_slack = {_fmt(sim_result.min_merging_slack)}",
        f"bound_violations = {len(sim_result.bounds)}",
        f"fifo_inversions = {sim_result.fifo_inversions}",
    ]
    for k in sorted(sim_result.plan_counts):
        lines.append(f"plans.{k} = {sim_result.plan_counts[k]}")
    for k, val in m.as_dict().items():
        lines.append(f"oc.{k} = {_fmt(val)}")
    if baseline is not None:
        lines.append("# baseline: constant-time-headway car following, not Vissim")
        for k, val in summarize_baseline(baseline, coeffs, p.beta).items():
            lines.append(f"baseline.{k} = {_fmt(val)}")
    with open(out / "metrics.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    written.append(out / "metrics.txt")

    for r in records:
        if not r.j_curve:
            continue
        written.append(
            _write(out / f"jstar_cav{r.id}.csv", [["t1", "J"]] + [[_fmt(a), _fmt(b)] for a, b in r.j_curve])
        )
        lead = prev_same[r.id]
        if lead is not None:
            tr = r.trajectory
            ts = _sample_times(tr.t0, tr.t_m, min(config.sample_dt, 0.05))
            g = gaps(tr, lead.trajectory.with_hold(math.inf), ts, p.phi, p.delta)
            written.append(
                _write(out / f"gap_cav{r.id}.csv", [["t", "slack"]] + [[_fmt(a), _fmt(b)] for a, b in zip(ts, g)])
            )
    return written


def summarize_baseline(vehicles, coeffs: FuelCoeffs, beta: float) -> dict:
    out = {}
    groups = {"overall": vehicles}
    for lane in Lane:
        groups[lane.value] = [b for b in vehicles if b.lane == lane]
    for name, vs in groups.items():
        if not vs:
            continue
        t = np.array([b.travel_time for b in vs])
        e = np.array([b.energy for b in vs])
        f = np.array([np.trapezoid(fuel_rate(b.v, b.u, coeffs), b.ts) for b in vs])
        out[f"{name}.count"] = len(vs)
        out[f"{name}.mean_time"] = float(t.mean())
        out[f"{name}.mean_energy"] = float(e.mean())
        out[f"{name}.mean_objective"] = float((beta * t + e).mean())
        out[f"{name}.mean_fuel"] = float(f.mean())
    return out


# --- worked examples --------------------------------------------------------------

EXAMPLES = ("caseA_sweep_beta", "caseA_sweep_v0", "caseA_constrained", "caseB_sweep", "caseB_constrained")
_EX = dict(L=400.0, phi=1.8, delta=0.0, beta=2.667)


def run_example(name: str, out_dir="examples_out") -> dict:
    """Regenerate the data behind one of the worked examples; returns a summary dict."""
    if name not in EXAMPLES:
        raise ValueError(f"unknown example {name!r}; choose from {', '.join(EXAMPLES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    L, phi, delta, beta = _EX["L"], _EX["phi"], _EX["delta"], _EX["beta"]
    summary = {"name": name, "files": []}

    if name == "caseA_sweep_beta":
        rows = [["beta", "travel_time", "v_m"]]
        for b in np.round(np.arange(0.0, 10.0001, 0.25), 6):
            s = solve_case_a(0.0, 20.0, L, float(b))
            rows.append([_fmt(b), _fmt(s.travel_time), _fmt(s.terminal_speed)])
            summary.setdefault("travel_time", {})[float(b)] = float(s.travel_time)
        summary["files"].append(_write(out / f"{name}.csv", rows))
    elif name == "caseA_sweep_v0":
        rows = [["v0", "travel_time", "v_m"]]
        for v0 in np.round(np.arange(10.0, 30.0001, 0.5), 6):
            s = solve_case_a(0.0, float(v0), L, beta)
            rows.append([_fmt(v0), _fmt(s.travel_time), _fmt(s.terminal_speed)])
        summary["files"].append(_write(out / f"{name}.csv", rows))
    elif name == "caseB_sweep":
        rows = [["sweep", "value", "t_m", "v_m"]]
        base = solve_case_b(1.0, 20.0, L, beta, phi, delta, 30.0, 15.0)
        summary["t_m"] = base.t_m
        rows.append(["reference", "0", _fmt(base.t_m), _fmt(base.terminal_speed)])
        for t0 in np.round(np.arange(0.0, 3.0001, 0.25), 6):
            s = solve_case_b(float(t0), 20.0, L, beta, phi, delta, 30.0, 15.0)
            rows.append(["t0", _fmt(t0), _fmt(s.t_m), _fmt(s.terminal_speed)])
        for v0 in np.round(np.arange(14.0, 28.0001, 1.0), 6):
            s = solve_case_b(1.0, float(v0), L, beta, phi, delta, 30.0, 15.0)
            rows.append(["v0", _fmt(v0), _fmt(s.t_m), _fmt(s.terminal_speed)])
        for b in np.round(np.arange(0.5, 6.0001, 0.5), 6):
            s = solve_case_b(1.0, 20.0, L, float(b), phi, delta, 30.0, 15.0)
            rows.append(["beta", _fmt(b), _fmt(s.t_m), _fmt(s.terminal_speed)])
        v0m, sm = solve_case_b_matched_speed(1.0, L, beta, phi, delta, 30.0, 15.0)
        rows.append(["matched_v0", _fmt(v0m), _fmt(sm.t_m), _fmt(sm.terminal_speed)])
        summary["matched_v0"] = v0m
        summary["files"].append(_write(out / f"{name}.csv", rows))
    else:
        params = ScenarioParams(L=L, phi=phi, delta=delta, beta=beta)
        lead = solve_case_a(0.0, 20.0, L, beta)
        if name == "caseA_constrained":
            plan = algorithm1(2.7, 27.0, lead.trajectory(), params)
        else:
            im1 = solve_case_b(0.1, 20.0, L, beta, phi, delta, lead.terminal_speed, lead.t_m)
            plan = algorithm2(2.55, 28.0, lead.trajectory(), im1.trajectory(), params)
        summary.update(t1=plan.t1, t2=plan.t2, t_m=plan.t_m, J=plan.J_star, infeasible=plan.infeasible_set)
        summary["files"].append(
            _write(out / f"{name}_jstar.csv", [["t1", "J"]] + [[_fmt(a), _fmt(b)] for a, b in plan.j_curve])
        )
        tr = plan.trajectory()
        ts = _sample_times(tr.t0, tr.t_m, 0.05)
        x, v, u = tr.states(ts)
        g = gaps(tr, lead.trajectory().with_hold(math.inf), ts, phi, delta)
        rows = [["t", "x", "v", "u", "slack"]] + [
            [_fmt(ts[k]), _fmt(x[k]), _fmt(v[k]), _fmt(u[k]), _fmt(g[k])] for k in range(len(ts))
        ]
        summary["files"].append(_write(out / f"{name}_profile.csv", rows))
        summary["files"].append(
            _write(
                out / f"{name}_events.csv",
                [["event", "t"], ["t1", _fmt(plan.t1)], ["t2", _fmt(plan.t2)], ["t_m", _fmt(plan.t_m)]],
            )
        )
    return summary


# --- entry point ----------------------------------------------------------------


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="cavmerge", description="Optimal merging control of automated vehicles")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="closed-loop run from a key=value config file")
    r.add_argument("config")
    r.add_argument("--out", help="override output_dir")
    e = sub.add_parser("example", help="regenerate a worked example")
    e.add_argument("name", choices=EXAMPLES)
    e.add_argument("--out", default="examples_out")
    args = ap.parse_args(argv)

    if args.cmd == "example":
        s = run_example(args.name, args.out)
        for k, v in s.items():
            if k not in ("files", "travel_time"):
                print(f"{k} = {v}")
        print(f"wrote {len(s['files'])} files to {args.out}")
        return 0
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text)
        if args.out:
            cfg = RunConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(RunConfig)}, "output_dir": args.out})
        params = cfg.scenario()
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        result = run(params, cfg.horizon)
    except (SimulationError, InfeasibleError) as exc:
        print(f"planner infeasible: {exc}", file=sys.stderr)
        return 2
    base = None
    if cfg.baseline:
        arrivals = generate_arrivals(params.arrival_rate_per_lane, cfg.horizon, params.rng_seed,
                                     (params.v_min + 2.0, params.v_max - 2.0))
        base = run_baseline(arrivals, params)
    try:
        files = export(result, cfg, base)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    print(f"planned {len(result.records)} vehicles; wrote {len(files)} files to {cfg.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
