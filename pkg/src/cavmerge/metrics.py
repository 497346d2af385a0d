"""Per-vehicle and aggregate performance: objective, control energy, fuel."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .model import Lane, Trajectory

BRAKING_TOTAL = "total"
BRAKING_ACCEL_ONLY = "accel_only"


@dataclass(frozen=True)
class FuelCoeffs:
    """Polynomial fuel-rate metamodel (mL/s).

    cruise = w0 + w1 v + w2 v^2 + w3 v^3, accel = (r0 + r1 v + r2 v^2) u.
    """

    w0: float
    w1: float
    w2: float
    w3: float
    r0: float
    r1: float
    r2: float

    def __post_init__(self):
        bad = [f.name for f in fields(self) if not getattr(self, f.name) >= 0]
        if bad:
            raise ValueError(f"fuel coefficients must be nonnegative: {', '.join(bad)}")

    @classmethod
    def from_text(cls, text: str) -> "FuelCoeffs":
        vals = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {n}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in {f.name for f in fields(cls)}:
                raise ValueError(f"line {n}: unknown fuel coefficient {k!r}")
            vals[k] = float(v)
        missing = [f.name for f in fields(cls) if f.name not in vals]
        if missing:
            raise ValueError(f"missing fuel coefficients: {', '.join(missing)}")
        return cls(**vals)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "FuelCoeffs":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "FuelCoeffs":
        """Bundled non-authoritative defaults (see data/fuel_default.txt)."""
        text = resources.files("cavmerge").joinpath("data/fuel_default.txt").read_text(encoding="utf-8")
        return cls.from_text(text)


def objective(trajectory: Trajectory, beta: float) -> float:
    """beta * travel time + integral of u^2/2, in closed form."""
    return beta * (trajectory.t_m - trajectory.t0) + trajectory.energy()


def fuel_rate(v, u, coeffs: FuelCoeffs, braking: str = BRAKING_TOTAL):
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    c = coeffs
    cruise = c.w0 + v * (c.w1 + v * (c.w2 + v * c.w3))
    accel = (c.r0 + v * (c.r1 + v * c.r2)) * u
    if braking == BRAKING_TOTAL:
        return np.where(u < 0, 0.0, cruise + accel)
    if braking == BRAKING_ACCEL_ONLY:
        return cruise + np.where(u < 0, 0.0, accel)
    raise ValueError(f"unknown braking rule {braking!r}")


def fuel(trajectory: Trajectory, coeffs: FuelCoeffs, dt: float = 0.01, braking: str = BRAKING_TOTAL) -> float:
    """Fuel in mL over [t0, t_m] by the trapezoidal rule on a grid no coarser than dt."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    n = max(2, int(math.ceil((trajectory.t_m - trajectory.t0) / dt)) + 1)
    ts = np.linspace(trajectory.t0, trajectory.t_m, n)
    _, v, u = trajectory.states(ts)
    return float(np.trapezoid(fuel_rate(v, u, coeffs, braking), ts))


@dataclass(frozen=True)
class LaneMetrics:
    count: int
    mean_time: float
    mean_energy: float
    mean_objective: float
    mean_fuel: float


@dataclass(frozen=True)
class RunMetrics:
    overall: LaneMetrics
    main: Optional[LaneMetrics]
    merging: Optional[LaneMetrics]

    def as_dict(self) -> dict:
        out = {}
        for name in ("overall", "main", "merging"):
            m = getattr(self, name)
            if m is None:
                continue
            for f in fields(m):
                out[f"{name}.{f.name}"] = getattr(m, f.name)
        return out


def _lane_metrics(rows) -> Optional[LaneMetrics]:
    if not rows:
        return None
    a = np.array(rows, dtype=float)
    m = a.mean(axis=0)
    return LaneMetrics(len(rows), float(m[0]), float(m[1]), float(m[2]), float(m[3]))


def summarize(
    sim_result,
    coeffs: Optional[FuelCoeffs] = None,
    beta: Optional[float] = None,
    dt: float = 0.01,
    braking: str = BRAKING_TOTAL,
) -> RunMetrics:
    """Table-style averages split by lane.  Accepts a SimResult or an iterable of records."""
    records = getattr(sim_result, "records", sim_result)
    if beta is None:
        beta = sim_result.params.beta
    coeffs = coeffs or FuelCoeffs.default()
    rows = {Lane.MAIN: [], Lane.MERGING: []}
    for r in records:
        tr = r.trajectory
        if tr is None:
            continue
        e = tr.energy()
        rows[r.lane].append((tr.t_m - tr.t0, e, beta * (tr.t_m - tr.t0) + e, fuel(tr, coeffs, dt, braking)))
    everything = rows[Lane.MAIN] + rows[Lane.MERGING]
    if not everything:
        raise ValueError("cannot summarize a run with no planned vehicles")
    return RunMetrics(_lane_metrics(everything), _lane_metrics(rows[Lane.MAIN]), _lane_metrics(rows[Lane.MERGING]))


def count_weighted(parts: Iterable[LaneMetrics]) -> LaneMetrics:
    """Combine lane means back into an overall mean."""
    parts = [p for p in parts if p is not None]
    n = sum(p.count for p in parts)
    return LaneMetrics(
        n,
        sum(p.count * p.mean_time for p in parts) / n,
        sum(p.count * p.mean_energy for p in parts) / n,
        sum(p.count * p.mean_objective for p in parts) / n,
        sum(p.count * p.mean_fuel for p in parts) / n,
    )
