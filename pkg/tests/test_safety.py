import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavmerge.model import PolySegment, Trajectory
from cavmerge.safety import check_window, gap, gaps, theorem1_guard, theorem4_guard
from cavmerge.unconstrained import solve_case_a

L, PHI, DELTA, BETA = 400.0, 1.8, 0.0, 2.667


def _const(t0, v, span=40.0):
    return Trajectory((PolySegment(t0, t0 + span, 0.0, 0.0, v, 0.0),))


def test_constant_offset_slack():
    h, v0 = 2.5, 20.0
    lead = _const(0.0, v0, 60.0)
    foll = _const(h, v0)
    for t in (h, 10.0, 30.0):
        assert gap(foll, lead, t, PHI, 0.0) == pytest.approx((h - PHI) * v0, abs=1e-9)


def test_boundary_case_zero_slack():
    v0 = 20.0
    lead = _const(0.0, v0, 60.0)
    foll = _const(PHI, v0)
    rep = check_window(foll, lead, PHI, PHI + 40.0, PHI, 0.0)
    assert abs(rep.min_gap_slack) < 1e-9 and not rep.violated


def test_guard_pair_strict():
    lead = solve_case_a(0.0, 20.0, L, BETA).trajectory(hold_until=math.inf)
    foll = solve_case_a(PHI + 0.5, 20.0, L, BETA).trajectory()
    rep = check_window(foll, lead, foll.t0, foll.t_m, PHI, DELTA)
    assert rep.min_gap_slack > 0 and not rep.violated


def test_example_pair_unconstrained_violates():
    lead = solve_case_a(0.0, 20.0, L, BETA).trajectory(hold_until=math.inf)
    foll = solve_case_a(2.7, 27.0, L, BETA).trajectory()
    rep = check_window(foll, lead, foll.t0, foll.t_m, PHI, DELTA)
    assert rep.violated
    assert foll.t0 < rep.first_violation_time < foll.t_m
    assert gap(foll, lead, rep.first_violation_time, PHI, DELTA) == pytest.approx(-1e-6, abs=1e-8)


def test_example_slack_at_entry(example_a):
    lead, plan = example_a
    tr = plan.trajectory()
    assert abs(gap(tr, lead.trajectory(math.inf), plan.t1, PHI, DELTA)) < 1e-4
    ts = np.linspace(plan.t1, plan.t2, 500)
    assert np.max(np.abs(gaps(tr, lead.trajectory(math.inf), ts, PHI, DELTA))) < 1e-4


def test_example_b_slack_zero_on_arc(example_b):
    lead, _, plan = example_b
    tr = plan.trajectory()
    ts = np.linspace(plan.t1, plan.t2, 200)
    assert np.max(np.abs(gaps(tr, lead.trajectory(math.inf), ts, PHI, DELTA))) < 1e-4
    rep = check_window(tr, lead.trajectory(math.inf), tr.t0, tr.t_m, PHI, DELTA)
    assert rep.active_intervals and not rep.violated


def test_gap_continuous_at_breakpoints(example_a):
    lead, plan = example_a
    tr, lt = plan.trajectory(), lead.trajectory(math.inf)
    for tb in tr.breakpoints():
        if tr.t0 < tb < tr.t_m:
            g0 = gap(tr, lt, tb - 1e-9, PHI, DELTA)
            g1 = gap(tr, lt, tb + 1e-9, PHI, DELTA)
            assert abs(g0 - g1) < 1e-6


def test_reported_min_is_a_lower_bound(example_a):
    lead, plan = example_a
    tr, lt = plan.trajectory(), lead.trajectory(math.inf)
    rep = check_window(tr, lt, tr.t0, tr.t_m, PHI, DELTA)
    ts = np.random.default_rng(7).uniform(tr.t0, tr.t_m, 1000)
    assert rep.min_gap_slack <= np.min(gaps(tr, lt, ts, PHI, DELTA)) + 1e-12


def test_guards():
    assert theorem1_guard(20, 20, 2.0, 0, 1.8, 0)
    assert not theorem1_guard(27, 20, 2.7, 0, 1.8, 0)
    assert not theorem1_guard(20, 25, 1.9, 0, 1.8, 4.0)
    assert theorem4_guard(20, 20, 10.0, 0, 1.8, 0)
    assert not theorem4_guard(20, 20, 1.0, 0.1, 1.8, 0)
    assert not theorem4_guard(28, 20, 2.55, 0.1, 1.8, 0)


guard_pairs = st.tuples(
    st.floats(10.0, 30.0),  # leader speed
    st.floats(0.0, 1.0),  # follower speed as a fraction of the way down to 10 m/s
    # extra spacing beyond the guard; with zero extra and equal speeds the follower
    # replays the leader shifted by phi and the slack touches 0 exactly at its t_m
    st.floats(1e-3, 5.0),
    st.floats(0.05, 10.0),  # beta
)


@settings(max_examples=100, deadline=None)
@given(guard_pairs)
def test_guard_implies_strict_safety(case):
    v_ip, frac, extra, beta = case
    v_i = v_ip - frac * (v_ip - 10.0)
    t_i = PHI + DELTA / v_i + extra
    assert theorem1_guard(v_i, v_ip, t_i, 0.0, PHI, DELTA)
    lead = solve_case_a(0.0, v_ip, L, beta).trajectory(hold_until=math.inf)
    foll = solve_case_a(t_i, v_i, L, beta).trajectory()
    rep = check_window(foll, lead, foll.t0, foll.t_m, PHI, DELTA)
    assert rep.min_gap_slack > 0
