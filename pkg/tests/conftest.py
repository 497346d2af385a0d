import pytest

from cavmerge.constrained import algorithm1, algorithm2
from cavmerge.model import ScenarioParams
from cavmerge.unconstrained import solve_case_a, solve_case_b

L, PHI, DELTA, BETA = 400.0, 1.8, 0.0, 2.667


@pytest.fixture(scope="session")
def params():
    return ScenarioParams(L=L, phi=PHI, delta=DELTA, beta=BETA)


@pytest.fixture(scope="session")
def example_a(params):
    """Same-lane pair: leader (0 s, 20 m/s), follower (2.7 s, 27 m/s)."""
    lead = solve_case_a(0.0, 20.0, L, BETA)
    plan = algorithm1(2.7, 27.0, lead.trajectory(), params)
    return lead, plan


@pytest.fixture(scope="session")
def example_b(params):
    """Three vehicles: i_p (0 s, 20), i-1 in the other lane (0.1 s, 20), i (2.55 s, 28)."""
    lead = solve_case_a(0.0, 20.0, L, BETA)
    im1 = solve_case_b(0.1, 20.0, L, BETA, PHI, DELTA, lead.terminal_speed, lead.t_m)
    plan = algorithm2(2.55, 28.0, lead.trajectory(), im1.trajectory(), params)
    return lead, im1, plan
