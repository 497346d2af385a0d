import csv
import io
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import cavmerge.cli as cli
from cavmerge.cli import ConfigError, RunConfig, export, main, parse_config, run_example, serialize
from cavmerge.model import CavRecord, Lane, ScenarioParams
from cavmerge.sim import SimulationError, run

REFERENCE_CFG = """\
# on-ramp scenario
L = 400
phi = 1.8
delta = 0
v_min = 10
v_max = 30
u_min = -3.924
u_max = 3.924
alpha = 0.26
arrival_rate_per_lane = 600
rng_seed = 0
horizon = 120
output_dir = {out}
"""


def test_parse_reference_config():
    cfg = parse_config(REFERENCE_CFG.format(out="o"))
    assert (cfg.L, cfg.phi, cfg.delta) == (400.0, 1.8, 0.0)
    assert (cfg.v_min, cfg.v_max, cfg.u_min, cfg.u_max) == (10.0, 30.0, -3.924, 3.924)
    assert cfg.alpha == 0.26 and cfg.beta is None and cfg.arrival_rate_per_lane == 600.0
    assert cfg.scenario().beta == pytest.approx(0.26 * 3.924 ** 2 / (2 * 0.74))


def test_empty_config_lists_required_keys():
    with pytest.raises(ConfigError) as ei:
        parse_config("")
    msg = str(ei.value)
    for key in ("L", "phi", "delta", "v_min", "v_max", "u_min", "u_max", "arrival_rate_per_lane",
                "rng_seed", "horizon", "output_dir", "alpha|beta"):
        assert key in msg


def test_alpha_beta_conflict():
    with pytest.raises(ConfigError, match="conflict"):
        parse_config(REFERENCE_CFG.format(out="o") + "beta = 2.0\n")


def test_type_mismatch_has_line_number():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config(REFERENCE_CFG.format(out="o").replace("phi = 1.8", "phi = fast"))


def test_unknown_and_duplicate_keys():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("speed = 3\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("L = 1\nL = 2\n")
    with pytest.raises(ConfigError, match="sample_dt"):
        parse_config(REFERENCE_CFG.format(out="o") + "sample_dt = 0\n")


finite = st.floats(0.1, 1e4, allow_nan=False, allow_infinity=False)


@settings(max_examples=100)
@given(
    finite, finite, st.floats(0.0, 50.0), st.integers(0, 2 ** 31), st.booleans(),
    st.one_of(st.none(), finite), st.floats(0.0, 0.99), st.booleans(),
)
def test_round_trip(L, phi, delta, seed, use_alpha, zeta, alpha, base):
    cfg = RunConfig(
        L=L, phi=phi, delta=delta, v_min=10.0, v_max=30.0, u_min=-3.924, u_max=3.924,
        arrival_rate_per_lane=600.0, rng_seed=seed, horizon=3600.0, output_dir="out dir/x",
        alpha=alpha if use_alpha else None, beta=None if use_alpha else alpha * 10,
        zeta=zeta, sample_dt=0.25, fuel_file=None, baseline=base,
    )
    assert parse_config(serialize(cfg)) == cfg


def _cfg(tmp_path, **kw):
    base = dict(
        L=400.0, phi=1.8, delta=0.0, v_min=10.0, v_max=30.0, u_min=-3.924, u_max=3.924,
        arrival_rate_per_lane=600.0, rng_seed=0, horizon=60.0, output_dir=str(tmp_path), beta=0.0,
    )
    base.update(kw)
    return RunConfig(**base)


def test_export_single_constant_speed(tmp_path):
    cfg = _cfg(tmp_path, sample_dt=1.0)
    res = run(cfg.scenario(), 60.0, arrivals=[CavRecord(0, Lane.MAIN, 0.0, 20.0)])
    export(res, cfg)
    raw = (tmp_path / "trajectories.csv").read_bytes()
    assert b"\r" not in raw
    rows = list(csv.DictReader(io.StringIO(raw.decode())))
    assert len(rows) == 21
    assert all(r["v"] == "20" for r in rows)
    assert raw.splitlines()[0] == b"cav_id,lane,t,x,v,u,slack_pred"
    metrics = (tmp_path / "metrics.txt").read_text()
    assert "oc.overall.mean_time = 20" in metrics


def test_export_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        cfg = _cfg(d, beta=2.667, rng_seed=3, horizon=240.0)
        export(run(cfg.scenario(), cfg.horizon), cfg)
    for name in ("trajectories.csv", "events.csv", "metrics.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_export_events_for_constrained_pair(tmp_path):
    cfg = _cfg(tmp_path, beta=2.667)
    arrivals = [CavRecord(0, Lane.MAIN, 0.0, 20.0), CavRecord(1, Lane.MAIN, 2.7, 27.0)]
    files = export(run(cfg.scenario(), 60.0, arrivals=arrivals), cfg)
    ev = list(csv.DictReader(open(tmp_path / "events.csv")))
    t1 = [float(r["t"]) for r in ev if r["event"] == "t1"]
    t2 = [float(r["t"]) for r in ev if r["event"] == "t2"]
    assert t1 and abs(t1[0] - 9.25) < 0.05
    assert t2 and abs(t2[0] - 15.76) < 0.05
    names = {f.name for f in files}
    assert "jstar_cav1.csv" in names and "gap_cav1.csv" in names


def test_export_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = _cfg(blocker / "sub")
    res = run(cfg.scenario(), 60.0, arrivals=[CavRecord(0, Lane.MAIN, 0.0, 20.0)])
    with pytest.raises(ConfigError):
        export(res, cfg)


def test_examples(tmp_path):
    s = run_example("caseA_constrained", tmp_path)
    assert abs(s["t1"] - 9.25) < 0.05 and abs(s["t2"] - 15.76) < 0.05
    s = run_example("caseB_sweep", tmp_path)
    rows = list(csv.reader(open(tmp_path / "caseB_sweep.csv")))
    assert any(r[0] == "reference" and abs(float(r[2]) - 16.6856) < 1e-3 for r in rows)
    s = run_example("caseA_sweep_beta", tmp_path)
    assert s["travel_time"][0.0] == 20.0
    s = run_example("caseB_constrained", tmp_path)
    assert abs(s["t1"] - 5.30) < 0.05
    run_example("caseA_sweep_v0", tmp_path)
    with pytest.raises(ValueError):
        run_example("nope", tmp_path)


def test_main_exit_codes(tmp_path, monkeypatch, capsys):
    good = tmp_path / "run.cfg"
    good.write_text(REFERENCE_CFG.format(out=tmp_path / "out") + "baseline = true\n")
    assert main(["run", str(good)]) == 0
    text = (tmp_path / "out" / "metrics.txt").read_text()
    assert "not Vissim" in text and "baseline.overall.mean_time" in text

    bad = tmp_path / "bad.cfg"
    bad.write_text("L = 400\n")
    assert main(["run", str(bad)]) == 1
    assert main(["run", str(tmp_path / "missing.cfg")]) == 1

    def boom(*a, **k):
        raise SimulationError("planner infeasible", {})

    monkeypatch.setattr(cli, "run", boom)
    assert main(["run", str(good)]) == 2
    assert main(["example", "caseA_sweep_v0", "--out", str(tmp_path / "ex")]) == 0
