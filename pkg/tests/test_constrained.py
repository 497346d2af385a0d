import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavmerge.constrained import (
    _Arc,
    _candidate,
    _complement,
    _Context,
    _pre_arc_ok,
    _planning_horizon,
    algorithm1,
    algorithm2,
    arc_solution,
    exit_system_case_a,
    infeasible_set,
    objective_of_t1,
    pre_arc_coeffs,
)
from cavmerge.model import ExpSegment, InfeasibleError, PolySegment, ScenarioParams, Trajectory
from cavmerge.safety import check_window, gaps
from cavmerge.unconstrained import solve_case_a

L, PHI, DELTA, BETA = 400.0, 1.8, 0.0, 2.667
U_MAX = 3.924


def _rk4_speed(leader, t_a, t_b, v_a, phi, dt=1e-4):
    """Integrate v' = (v_p - v)/phi with classic RK4."""
    n = int(round((t_b - t_a) / dt))
    h = (t_b - t_a) / n
    ts = t_a + 0.5 * h * np.arange(2 * n + 1)
    vp = leader.states(ts)[1]
    v = v_a
    out = np.empty(n + 1)
    out[0] = v
    for k in range(n):
        p0, pm, p1 = vp[2 * k], vp[2 * k + 1], vp[2 * k + 2]
        k1 = (p0 - v) / phi
        k2 = (pm - v - 0.5 * h * k1) / phi
        k3 = (pm - v - 0.5 * h * k2) / phi
        k4 = (p1 - v - h * k3) / phi
        v += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        out[k + 1] = v
    return ts[::2], out


def _residuals_pre_arc(pre, t1, leader):
    x, v, u = pre.state(t1)
    xp, vp, _ = leader.state(t1)
    x0, v00, _ = pre.state(pre.t_start)
    return (abs(x0), abs(v00 - pre.c), abs(xp - x - PHI * v - DELTA), abs(vp - v - PHI * u))


# --- worked examples ------------------------------------------------------------


def test_algorithm1_worked_example(example_a):
    _, plan = example_a
    assert plan.t1 == pytest.approx(9.25, abs=0.05)
    assert plan.t2 == pytest.approx(15.76, abs=0.05)
    assert plan.infeasible_set[0][0] == pytest.approx(10.5, abs=0.1)


def test_algorithm1_runtime(params):
    lead = solve_case_a(0.0, 20.0, L, BETA).trajectory()
    t = time.perf_counter()
    algorithm1(2.7, 27.0, lead, params)
    assert time.perf_counter() - t < 5.0


def test_algorithm2_worked_example(example_b):
    _, im1, plan = example_b
    assert plan.t1 == pytest.approx(5.30, abs=0.05)
    assert plan.t2 == pytest.approx(5.5794, abs=0.01)
    assert plan.infeasible_set[0][0] == pytest.approx(6.84, abs=0.1)
    tr = plan.trajectory()
    z = im1.trajectory(math.inf).state(tr.t_m)[0] - L
    assert abs(z - PHI * tr.terminal_speed - DELTA) < 1e-6


@pytest.mark.parametrize("which", ["a", "b"])
def test_plan_safety_and_continuity(which, example_a, example_b):
    lead, plan = (example_a[0], example_a[1]) if which == "a" else (example_b[0], example_b[2])
    lt = lead.trajectory(math.inf)
    tr = plan.trajectory()
    rep = check_window(tr, lt, tr.t0, tr.t_m, PHI, DELTA)
    assert rep.min_gap_slack >= -1e-6
    ts = np.arange(plan.t1, plan.t2, 1e-3)
    assert np.max(np.abs(gaps(tr, lt, ts, PHI, DELTA))) < 1e-4
    for tb in (plan.t1, plan.t2):
        left = [s for s in tr.segments if abs(s.t_end - tb) < 1e-9][0]
        right = [s for s in tr.segments if abs(s.t_start - tb) < 1e-9][0]
        assert abs(left.state(tb)[2] - right.state(tb)[2]) < 1e-6
    x, v, u = tr.state(tr.t_m)
    assert x == pytest.approx(L, abs=1e-6)


@pytest.mark.parametrize("which", ["a", "b"])
def test_arc_matches_rk4(which, example_a, example_b):
    lead, plan = (example_a[0], example_a[1]) if which == "a" else (example_b[0], example_b[2])
    lt = lead.trajectory(math.inf)
    tr = plan.trajectory()
    ts, v_rk = _rk4_speed(lt, plan.t1, plan.t2, tr.state(plan.t1)[1], PHI)
    v_cf = tr.states(ts)[1]
    assert np.max(np.abs(v_rk - v_cf)) < 1e-6


def test_pre_arc_residuals_at_reported_t1(example_a):
    lead, _ = example_a
    lt = lead.trajectory(math.inf)
    pre = pre_arc_coeffs(9.25, 2.7, 27.0, lt.state(9.25)[:2], PHI, DELTA)
    assert max(_residuals_pre_arc(pre, 9.25, lt)) < 1e-9
    a, b, c, d = pre.absolute()
    assert c + b * 2.7 + a * 2.7 ** 2 / 2 == pytest.approx(27.0, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(3.0, 20.0))
def test_pre_arc_residuals_random(t1):
    lt = solve_case_a(0.0, 20.0, L, BETA).trajectory(math.inf)
    pre = pre_arc_coeffs(t1, 2.7, 27.0, lt.state(t1)[:2], PHI, DELTA)
    assert max(_residuals_pre_arc(pre, t1, lt)) < 1e-10 * max(1.0, lt.state(t1)[0])


def test_pre_arc_on_boundary_limit():
    # follower already on the boundary behind a constant-speed leader
    v = 20.0
    lt = Trajectory((PolySegment(0.0, 100.0, 0.0, 0.0, v, 0.0),), hold_until=math.inf)
    t0 = PHI
    pre = pre_arc_coeffs(t0 + 1e-4, t0, v, lt.state(t0 + 1e-4)[:2], PHI, 0.0)
    assert abs(pre.a) < 1e-6 and abs(pre.b) < 1e-6


def test_arc_fixed_point():
    vp = 20.0
    lt = Trajectory((PolySegment(0.0, 100.0, 0.0, 0.0, vp, 0.0),), hold_until=math.inf)
    t1 = 10.0
    x1 = lt.state(t1)[0] - PHI * vp
    segs = arc_solution((x1, vp), lt, t1, 30.0, PHI, 0.0)
    ts = np.linspace(t1, 30.0, 50)
    _, v, u = _Arc(segs).states(ts)
    assert np.allclose(v, vp, atol=1e-12) and np.allclose(u, 0.0, atol=1e-12)


def test_infeasible_set_empty_behind_fast_leader():
    lt = solve_case_a(0.0, 28.0, L, BETA).trajectory(math.inf)
    assert infeasible_set(5.0, 12.0, lt, (5.01, 40.0), PHI, DELTA) == []
    # definitional cross-check on a grid: every pre-arc keeps nonnegative slack before t1
    for t1 in np.linspace(5.5, 40.0, 30):
        pre = pre_arc_coeffs(t1, 5.0, 12.0, lt.state(t1)[:2], PHI, DELTA)
        q = np.linspace(5.0, t1, 300)[:-1]
        x, v, _ = pre.states(q)
        assert np.all(lt.states(q)[0] - x - PHI * v - DELTA >= -1e-6)


def test_no_exit_behind_stopping_leader():
    lt = Trajectory((PolySegment(0.0, 20.0, 0.0, -1.0, 20.0, 0.0),), hold_until=math.inf)
    t0, v0, t1 = 2.0, 20.0, 4.0
    pre = pre_arc_coeffs(t1, t0, v0, lt.state(t1)[:2], PHI, DELTA)
    arc = _Arc(arc_solution(pre.state(t1)[:2], lt, t1, 200.0, PHI, DELTA))
    assert arc.time_at_position(L) is None
    assert exit_system_case_a(t1, arc, t0, L, BETA, 200.0, lt, PHI, DELTA) is None


def test_exit_case_a_residuals(example_a):
    _, plan = example_a
    post = plan.post_arc
    x2, v2, u2 = plan.arc[-1].state(plan.t2)
    assert post.state(plan.t2) == pytest.approx((x2, v2, u2), abs=1e-9)
    x, v, u = post.state(plan.t_m)
    assert abs(x - L) < 1e-8 and abs(u) < 1e-8
    assert abs(BETA + post.a * v) < 1e-8


def test_exit_case_b_tangency(example_b):
    _, im1, plan = example_b
    post = plan.post_arc
    x, v, u = post.state(plan.t_m)
    assert abs(x - L) < 1e-8
    tang = im1.terminal_speed * (plan.t_m - im1.t_m) - PHI * v - DELTA
    assert abs(tang) < 1e-6


def test_objective_trivial():
    seg = PolySegment(0.0, 20.0, 0.0, 0.0, 20.0, 0.0)
    assert objective_of_t1([seg], 0.0) == 0.0
    assert objective_of_t1([seg], BETA) == pytest.approx(BETA * 20.0)


def test_j_curve_interior_minimum(example_a):
    _, plan = example_a
    t1s = np.array([c[0] for c in plan.j_curve])
    Js = np.array([c[1] for c in plan.j_curve])
    k = int(np.argmin(Js))
    assert 0 < k < len(Js) - 1
    assert plan.infeasible_set[-1][1] == pytest.approx(solve_case_a(2.7, 27.0, L, BETA).t_m, abs=1e-9)
    assert t1s[k] == pytest.approx(9.25, abs=0.05)
    assert plan.J_star <= Js.min() + 1e-9


def test_objective_matches_plan(example_a):
    from cavmerge.metrics import objective

    _, plan = example_a
    assert objective(plan.trajectory(), BETA) == pytest.approx(plan.J_star, abs=1e-6)


@pytest.mark.parametrize("which", ["a", "b"])
def test_optimality_against_random_entries(which, params, example_a, example_b):
    if which == "a":
        lead, plan = example_a
        ctx = _Context(2.7, 27.0, lead.trajectory(math.inf), params, 0.0)
        upper = solve_case_a(2.7, 27.0, L, BETA).t_m
    else:
        lead, im1, plan = example_b
        ctx = _Context(2.55, 28.0, lead.trajectory(math.inf), params, 0.0, (im1.terminal_speed, im1.t_m))
        upper = plan.t_m
    ctx.horizon = _planning_horizon(ctx.leader, params)
    F = _complement(ctx.t0 + 1e-3, upper, plan.infeasible_set)
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 50:
        a, b = F[rng.integers(len(F))]
        t1 = float(rng.uniform(a, b))
        c = _candidate(ctx, t1)
        if c is None or not _pre_arc_ok(ctx, c[3], t1):
            continue
        assert plan.J_star <= c[0] + 1e-9
        checked += 1


def test_empty_feasible_set_is_typed(params):
    # follower already deep inside the headway: every entry time is infeasible
    lead = Trajectory((PolySegment(0.0, 40.0, 0.0, 0.0, 10.0, 0.0),))
    with pytest.raises(InfeasibleError):
        algorithm1(0.5, 30.0, lead, params)


# --- arc control bounds ---------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(
    st.floats(12.0, 28.0),  # leader entry speed
    st.floats(0.5, 8.0),  # beta
    st.floats(0.05, 0.95),  # entry time as a fraction of the leader's run
    st.floats(-1.0, 1.0),  # entry control as a fraction of the admissible range
)
def test_arc_control_within_bounds(v_lead, beta, frac, uf):
    lead = solve_case_a(0.0, v_lead, L, beta)
    lt = lead.trajectory(math.inf)
    _, _, u_lead = lt.states(np.linspace(0.0, lead.t_m, 200))
    if np.max(np.abs(u_lead)) > U_MAX:
        return
    t1 = frac * lead.t_m
    xp, vp, _ = lt.state(t1)
    u1 = uf * U_MAX
    v1 = vp - PHI * u1
    if v1 <= 0:
        return
    x1 = xp - PHI * v1 - DELTA
    segs = arc_solution((x1, v1), lt, t1, lead.t_m + 20.0, PHI, DELTA)
    ts = np.arange(t1, lead.t_m + 20.0, 1e-3)
    _, _, u = _Arc(segs).states(ts)
    assert np.all(u >= -U_MAX - 1e-12) and np.all(u <= U_MAX + 1e-12)
    assert u[0] == pytest.approx(u1, abs=1e-9)


def test_arc_control_within_bounds_recursive(example_a):
    # the leader itself rides a boundary arc for part of the window
    _, plan = example_a
    rng = np.random.default_rng(5)
    for frac, uf in zip(rng.uniform(0.05, 0.9, 25), rng.uniform(-1.0, 1.0, 25)):
        _recursive_case(plan, frac, uf)


def _recursive_case(plan, frac, uf):
    lt = plan.trajectory(math.inf)
    t1 = lt.t0 + frac * (lt.t_m - lt.t0)
    xp, vp, _ = lt.state(t1)
    u1 = uf * U_MAX
    v1 = vp - PHI * u1
    x1 = xp - PHI * v1 - DELTA
    segs = arc_solution((x1, v1), lt, t1, lt.t_m + 10.0, PHI, DELTA)
    assert any(isinstance(s, ExpSegment) and s.expo for s in segs) or t1 >= plan.t2
    ts = np.arange(t1, lt.t_m + 10.0, 1e-3)
    _, _, u = _Arc(segs).states(ts)
    assert np.all(np.abs(u) <= U_MAX + 1e-12)
