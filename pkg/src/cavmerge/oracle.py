"""Direct-collocation validator for the analytic planners.

The control is discretised at N+1 nodes on [t0, t0+T] and the double
integrator is transcribed with the trapezoidal rule.  For a fixed horizon T
every constraint is linear in the node controls and the energy is a diagonal
quadratic, so the inner problem is a convex QP solved to optimality.  The
horizon is then chosen by a bounded scalar search on J(T) = beta*T + E*(T).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .model import SolverError, Trajectory

_PENALTY = 1e12


@dataclass(frozen=True)
class CollocationProblem:
    t0: float
    v0: float
    L: float
    beta: float
    N: int = 200
    leader: Optional[Trajectory] = None
    phi: float = 1.8
    delta: float = 0.0
    merge: Optional[tuple] = None  # (v_prev_terminal, t_prev_m): terminal tangency row
    T_bounds: Optional[tuple] = None

    def __post_init__(self):
        if self.N < 50:
            raise ValueError("N must be at least 50")
        if not (self.v0 > 0 and self.L > 0 and self.beta >= 0):
            raise ValueError("need v0 > 0, L > 0, beta >= 0")


@dataclass(frozen=True)
class CollocationResult:
    J: float
    T: float
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray
    energy: float


def _unit_matrices(N):
    """Speed and position maps for unit step: v = v0 + h*Bv u, x = v0*t + h^2*Bx u."""
    Bv = np.zeros((N + 1, N + 1))
    for k in range(1, N + 1):
        Bv[k, 0] = 0.5
        Bv[k, 1:k] = 1.0
        Bv[k, k] += 0.5
    # trapezoidal integration of v (without the v0 part)
    S = np.zeros((N + 1, N + 1))
    for k in range(1, N + 1):
        S[k, 0] = 0.5
        S[k, 1:k] = 1.0
        S[k, k] += 0.5
    Bx = S @ Bv
    w = np.ones(N + 1)
    w[0] = w[-1] = 0.5
    return Bv, Bx, w


class _Inner:
    def __init__(self, prob: CollocationProblem):
        self.p = prob
        self.Bv, self.Bx, self.w = _unit_matrices(prob.N)
        self._cvx = None

    def rows(self, T):
        p, N = self.p, self.p.N
        h = T / N
        ts = p.t0 + h * np.arange(N + 1)
        A = [h * h * self.Bx[N]]
        b = [p.L - p.v0 * T]
        if p.merge is not None:
            vp, tpm = p.merge
            x_prev = p.L + vp * (p.t0 + T - tpm)
            A.append(p.phi * h * self.Bv[N])
            b.append(x_prev - p.L - p.delta - p.phi * p.v0)
        return h, ts, np.array(A), np.array(b)

    def solve(self, T):
        p = self.p
        if not T > 0:
            return None
        h, ts, A, b = self.rows(T)
        if p.leader is None:
            # min 1/2 h sum w u^2  s.t.  A u = b   (closed-form KKT)
            Hinv = 1.0 / (h * self.w)
            M = (A * Hinv) @ A.T
            try:
                lam = np.linalg.solve(M, b)
            except np.linalg.LinAlgError:
                return None
            u = Hinv * (A.T @ lam)
        else:
            u = self._solve_qp(h, ts, A, b)
            if u is None:
                return None
        v = p.v0 + h * (self.Bv @ u)
        x = p.v0 * (ts - p.t0) + h * h * (self.Bx @ u)
        energy = float(0.5 * h * np.sum(self.w * u * u))
        return ts, x, v, u, energy

    def _solve_qp(self, h, ts, A, b):
        """Sparse form: x, v, u all decision variables tied by trapezoidal equalities."""
        import cvxpy as cp

        p, N = self.p, self.p.N
        if self._cvx is None:
            u = cp.Variable(N + 1)
            v = cp.Variable(N + 1)
            x = cp.Variable(N + 1)
            hp = cp.Parameter(nonneg=True)
            rhs = cp.Parameter(N + 1)
            x_end = cp.Parameter()
            cons = [
                v[0] == p.v0,
                x[0] == 0.0,
                v[1:] - v[:-1] == 0.5 * hp * (u[1:] + u[:-1]),
                x[1:] - x[:-1] == 0.5 * hp * (v[1:] + v[:-1]),
                x[N] == p.L,
                x + p.phi * v <= rhs,
            ]
            if p.merge is not None:
                cons.append(p.phi * v[N] == x_end)
            obj = cp.Minimize(0.5 * hp * cp.sum(cp.multiply(self.w, cp.square(u))))
            self._cvx = (cp.Problem(obj, cons), u, hp, rhs, x_end)
        prob, u, hp, rhs, x_end = self._cvx
        hp.value = h
        rhs.value = p.leader.states(ts)[0] - p.delta
        if p.merge is not None:
            vp, tpm = p.merge
            x_end.value = vp * (ts[-1] - tpm) - p.delta
        try:
            prob.solve(solver=cp.CLARABEL)
        except cp.error.SolverError:
            return None
        if prob.status not in ("optimal", "optimal_inaccurate") or u.value is None:
            return None
        return np.asarray(u.value, dtype=float)


def solve_collocation(problem: CollocationProblem, T_guess: Optional[float] = None) -> CollocationResult:
    """Best discretised plan over the horizon T; J = beta*T + trapezoidal energy."""
    inner = _Inner(problem)

    def J(T):
        r = inner.solve(T)
        return _PENALTY if r is None else problem.beta * T + r[4]

    if problem.T_bounds is not None:
        lo, hi = problem.T_bounds
    else:
        g = T_guess if T_guess is not None else problem.L / problem.v0
        lo, hi = 0.6 * g, 1.6 * g
    res = minimize_scalar(J, bounds=(lo, hi), method="bounded", options={"xatol": 1e-7})
    T = float(res.x)
    # a bounded search can stall on an infeasible plateau; fall back to a scan
    if res.fun >= _PENALTY:
        grid = np.linspace(lo, hi, 41)
        vals = [J(t) for t in grid]
        k = int(np.argmin(vals))
        if vals[k] >= _PENALTY:
            raise SolverError("collocation problem infeasible over the searched horizons")
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
        T = float(minimize_scalar(J, bounds=(a, b), method="bounded", options={"xatol": 1e-7}).x)
    r = inner.solve(T)
    if r is None:
        raise SolverError(f"collocation solve failed at T={T}")
    ts, x, v, u, e = r
    return CollocationResult(problem.beta * T + e, T, ts, x, v, u, e)
