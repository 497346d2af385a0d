import math

import numpy as np
import pytest

from cavmerge.metrics import objective
from cavmerge.oracle import CollocationProblem, solve_collocation
from cavmerge.unconstrained import solve_case_a, solve_case_b

L, PHI, BETA = 400.0, 1.8, 2.667


def _analytic(v0):
    s = solve_case_a(0.0, v0, L, BETA)
    return s, objective(s.trajectory(), BETA)


def test_unconstrained_agreement():
    s, J = _analytic(20.0)
    r = solve_collocation(CollocationProblem(0.0, 20.0, L, BETA, N=200), T_guess=s.travel_time)
    assert abs(r.J - J) / J < 0.005
    assert r.x[-1] == pytest.approx(L, abs=1e-6)


def test_beta_zero():
    r = solve_collocation(CollocationProblem(0.0, 20.0, L, 0.0, N=100))
    assert r.J < 1e-6
    assert np.max(np.abs(r.u)) < 1e-3


def test_refinement_monotone():
    s, _ = _analytic(20.0)
    Js = [solve_collocation(CollocationProblem(0.0, 20.0, L, BETA, N=n), T_guess=s.travel_time).J for n in (200, 400, 800)]
    assert abs(Js[1] - Js[0]) > abs(Js[2] - Js[1])


def test_merge_row():
    lead = solve_case_a(0.0, 20.0, L, BETA)
    s = solve_case_b(1.0, 20.0, L, BETA, PHI, 0.0, 30.0, 15.0)
    J = objective(s.trajectory(), BETA)
    r = solve_collocation(
        CollocationProblem(1.0, 20.0, L, BETA, N=200, phi=PHI, merge=(30.0, 15.0)), T_guess=s.travel_time
    )
    assert abs(r.J - J) / J < 0.005


def test_constrained_dominance(example_a):
    lead, plan = example_a
    prob = CollocationProblem(2.7, 27.0, L, BETA, N=200, leader=lead.trajectory(math.inf), phi=PHI)
    r = solve_collocation(prob, T_guess=plan.t_m - 2.7)
    assert r.J >= plan.J_star - 0.005 * plan.J_star
    assert plan.J_star <= r.J + 1e-3 * r.J
    # discrete plan respects the headway at the nodes
    xp = lead.trajectory(math.inf).states(r.t)[0]
    assert np.all(xp - r.x - PHI * r.v >= -1e-5)


def test_rejects_small_grid():
    with pytest.raises(ValueError):
        CollocationProblem(0.0, 20.0, L, BETA, N=10)
