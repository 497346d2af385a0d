"""Optimal merging control of automated vehicles at a two-lane merging point."""
from .model import (
    CavMergeError,
    CavRecord,
    ExpSegment,
    InfeasibleError,
    Lane,
    OutOfDomainError,
    PolySegment,
    ScenarioParams,
    SolverError,
    Trajectory,
    alpha_to_beta,
    beta_to_alpha,
    evaluate,
)
from .unconstrained import solve_case_a, solve_case_b, solve_case_b_matched_speed
from .safety import check_window, gap, theorem1_guard, theorem4_guard
from .constrained import ConstrainedPlan, algorithm1, algorithm2, infeasible_set
from .sim import SimResult, SimulationError, run
from .metrics import FuelCoeffs, fuel, objective, summarize

__version__ = "0.1.0"
