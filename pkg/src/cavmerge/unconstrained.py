"""Optimal trajectories with no active constraint.

Two cases:

* ``CaseA`` -- the FIFO predecessor is also the physical predecessor, so the
  terminal time is free with ``u(t_m) = 0`` and ``beta + a v(t_m) = 0``.
* ``CaseB`` -- the FIFO predecessor is in the other lane, so the vehicle
  must arrive tangent to the merging headway of that predecessor (which keeps
  its terminal speed past the merging point), with the moving-boundary
  transversality row.

Both are solved by reduction to a single polynomial.  Case A becomes a quartic
in the terminal speed; case B becomes a quartic in the travel time once the
two linear terminal rows are used to eliminate ``a`` and ``b``.  Every real
root is a candidate; the feasible one is kept and polished by Newton on the
same scalar equation.  The costate multipliers never appear at runtime: they
are eliminated analytically by those reductions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial import Polynomial

from .model import PolySegment, SolverError, Trajectory


@dataclass(frozen=True)
class UnconstrainedCoeffs:
    """Solution of one unconstrained problem.

    The trajectory is stored relative to ``t0``: ``u = jerk*s + u0``,
    ``v = jerk*s^2/2 + u0*s + v0``, ``x = jerk*s^3/6 + u0*s^2/2 + v0*s``
    with ``s = t - t0``.  The absolute-time coefficients are the
    ``a``/``b``/``c``/``d`` properties.
    """

    t0: float
    v0: float
    jerk: float
    u0: float
    t_m: float
    case_tag: str
    residuals: tuple = field(default=())

    @property
    def travel_time(self) -> float:
        return self.t_m - self.t0

    def segment(self) -> PolySegment:
        return PolySegment(self.t0, self.t_m, self.jerk, self.u0, self.v0, 0.0)

    def trajectory(self, hold_until: Optional[float] = None) -> Trajectory:
        return Trajectory((self.segment(),), hold_until=hold_until)

    @property
    def a(self) -> float:
        return self.jerk

    @property
    def b(self) -> float:
        return self.segment().absolute()[1]

    @property
    def c(self) -> float:
        return self.segment().absolute()[2]

    @property
    def d(self) -> float:
        return self.segment().absolute()[3]

    @property
    def terminal_speed(self) -> float:
        T = self.travel_time
        return self.jerk * T * T / 2.0 + self.u0 * T + self.v0

    @property
    def terminal_control(self) -> float:
        return self.jerk * self.travel_time + self.u0

    @property
    def max_residual(self) -> float:
        return max(self.residuals) if self.residuals else 0.0


def _local_state(jerk, u0, v0, s):
    return jerk * s ** 3 / 6.0 + u0 * s * s / 2.0 + v0 * s, jerk * s * s / 2.0 + u0 * s + v0, jerk * s + u0


def _min_speed(jerk, u0, v0, T):
    """Minimum of the quadratic speed profile over [0, T]."""
    cands = [0.0, T]
    if jerk != 0.0:
        s_star = -u0 / jerk
        if 0.0 < s_star < T:
            cands.append(s_star)
    return min(jerk * s * s / 2.0 + u0 * s + v0 for s in cands)


def residuals_case_a(sol: UnconstrainedCoeffs, L: float, beta: float) -> tuple:
    """Scaled residuals of the five optimality equations, written in the t0-origin frame.

    Rows: initial speed, initial position, terminal position, terminal
    control, transversality.  Position rows are scaled by ``L``, speed rows by
    ``v0``, control rows by ``v0/T`` and the transversality row by ``(v0/T)^2``.
    """
    T = sol.travel_time
    a, u0, v0 = sol.jerk, sol.u0, sol.v0
    x0, vv0, _ = _local_state(a, u0, v0, 0.0)
    xT, vT, uT = _local_state(a, u0, v0, T)
    us = v0 / T
    return (
        abs(vv0 - v0) / v0,
        abs(x0) / L,
        abs(xT - L) / L,
        abs(uT) / us,
        abs(beta + a * vT) / (us * us),
    )


def residuals_case_b(
    sol: UnconstrainedCoeffs, L: float, beta: float, phi: float, delta: float, v_prev_terminal: float, t_prev_m: float
) -> tuple:
    """Scaled residuals of the five case-B rows (same scaling as case A; the tangency row in metres / L)."""
    T = sol.travel_time
    a, u0, v0 = sol.jerk, sol.u0, sol.v0
    x0, vv0, _ = _local_state(a, u0, v0, 0.0)
    xT, vT, uT = _local_state(a, u0, v0, T)
    us = v0 / T
    tangency = v_prev_terminal * (sol.t_m - t_prev_m) - (phi * vT + delta)
    trans = beta + a * vT - 0.5 * uT * uT + uT * v_prev_terminal / phi
    return (
        abs(vv0 - v0) / v0,
        abs(x0) / L,
        abs(xT - L) / L,
        abs(tangency) / L,
        abs(trans) / (us * us),
    )


def closed_form_travel_time(a: float, v0: float, L: float, beta: float) -> float:
    """Travel time 3aL/(a v0 - 2 beta) implied by the case-A optimality system."""
    if a == 0.0:
        if beta == 0.0:
            return L / v0
        raise ValueError("a = 0 is inconsistent with beta > 0")
    den = a * v0 - 2.0 * beta
    if den == 0.0:
        raise ValueError("degenerate denominator a*v0 - 2*beta = 0")
    return 3.0 * a * L / den


def terminal_speed_quartic(v0: float, L: float, beta: float) -> Polynomial:
    """4 vm^4 - 3 vm^2 v0^2 - vm v0^3 - (9/2) beta L^2, as a polynomial in vm."""
    return Polynomial([-4.5 * beta * L * L, -v0 ** 3, -3.0 * v0 * v0, 0.0, 4.0])


def _newton_polish(f, df, x, tol=1e-15, maxit=50):
    for _ in range(maxit):
        d = df(x)
        if d == 0.0:
            break
        step = f(x) / d
        x -= step
        if abs(step) <= tol * max(1.0, abs(x)):
            break
    return x


def solve_case_a(t0: float, v0: float, L: float, beta: float) -> UnconstrainedCoeffs:
    """Unconstrained optimum when the terminal time is free and no merging row applies."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if not (v0 > 0 and L > 0):
        raise ValueError("need v0 > 0 and L > 0")
    if beta == 0.0:
        sol = UnconstrainedCoeffs(t0, v0, 0.0, 0.0, t0 + L / v0, "CaseA")
        return _with_residuals_a(sol, L, beta)
    quartic = terminal_speed_quartic(v0, L, beta)
    roots = quartic.roots()
    real = [r.real for r in roots if abs(r.imag) <= 1e-9 * max(1.0, abs(r))]
    above = [r for r in real if r > v0]
    if not above:
        raise SolverError("no real terminal-speed root above the entry speed", candidates=list(roots))
    dq = quartic.deriv()
    vm = _newton_polish(lambda z: quartic(z), lambda z: dq(z), max(above))
    a = -beta / vm
    T = 3.0 * L / (v0 + 2.0 * vm)
    sol = UnconstrainedCoeffs(t0, v0, a, -a * T, t0 + T, "CaseA")
    return _with_residuals_a(sol, L, beta)


def _with_residuals_a(sol, L, beta):
    return UnconstrainedCoeffs(
        sol.t0, sol.v0, sol.jerk, sol.u0, sol.t_m, sol.case_tag, residuals_case_a(sol, L, beta)
    )


def _case_b_polys(t0, L, beta, phi, delta, vp, tpm, v0):
    """Polynomials in T (or in v0 when ``v0`` is a Polynomial) for the case-B reduction.

    Returns (A, B, vT, R) with jerk = A/T^3, u0 = B/T^2 and R = T^4 * transversality.
    """
    T = Polynomial([0.0, 1.0])
    vT = (vp * (t0 - tpm) - delta) / phi + (vp / phi) * T
    Pp = L - v0 * T
    Q = vT - v0
    A = 6.0 * Q * T - 12.0 * Pp
    B = Q * T - A / 2.0
    U = A + B
    R = beta * T ** 4 + A * vT * T - 0.5 * U * U + U * (vp / phi) * T * T
    return A, B, vT, R


def _case_b_coeffs_at(T, t0, v0, L, phi, delta, vp, tpm):
    vT = (vp * (t0 + T - tpm) - delta) / phi
    Pp = L - v0 * T
    Q = vT - v0
    jerk = (6.0 * Q * T - 12.0 * Pp) / T ** 3
    u0 = (Q - jerk * T * T / 2.0) / T
    return jerk, u0, vT


def _case_b_transversality(T, t0, v0, L, beta, phi, delta, vp, tpm):
    jerk, u0, vT = _case_b_coeffs_at(T, t0, v0, L, phi, delta, vp, tpm)
    uT = jerk * T + u0
    return beta + jerk * vT - 0.5 * uT * uT + uT * vp / phi


def _objective_local(jerk, u0, T, beta):
    return beta * T + jerk * jerk * T ** 3 / 6.0 + jerk * u0 * T * T / 2.0 + u0 * u0 * T / 2.0


def solve_case_b(
    t0: float,
    v0: float,
    L: float,
    beta: float,
    phi: float,
    delta: float,
    v_prev_terminal: float,
    t_prev_m: float,
) -> UnconstrainedCoeffs:
    """Unconstrained optimum with terminal merging tangency against the other-lane predecessor."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if not v_prev_terminal > 0:
        raise ValueError("v_prev_terminal must be > 0")
    vp, tpm = v_prev_terminal, t_prev_m
    _, _, _, R = _case_b_polys(t0, L, beta, phi, delta, vp, tpm, v0)
    # tangency needs a positive terminal speed
    T_lo = max(0.0, tpm - t0 + delta / vp)
    roots = R.roots()
    cands = []
    for r in roots:
        if abs(r.imag) > 1e-7 * max(1.0, abs(r)):
            continue
        T = r.real
        if not T > max(T_lo, 1e-9):
            continue

        def f(z):
            return _case_b_transversality(z, t0, v0, L, beta, phi, delta, vp, tpm)

        h = 1e-7 * max(1.0, T)
        T = _newton_polish(f, lambda z: (f(z + h) - f(z - h)) / (2 * h), T, tol=1e-15, maxit=8)
        jerk, u0, vT = _case_b_coeffs_at(T, t0, v0, L, phi, delta, vp, tpm)
        if _min_speed(jerk, u0, v0, T) <= 0.0:
            continue
        cands.append((_objective_local(jerk, u0, T, beta), T, jerk, u0))
    if not cands:
        raise SolverError(
            "no feasible root of the merging-tangency system (need real t_m > t0 with v > 0)",
            candidates=list(roots + t0),
        )
    _, T, jerk, u0 = min(cands)
    sol = UnconstrainedCoeffs(t0, v0, jerk, u0, t0 + T, "CaseB")
    res = residuals_case_b(sol, L, beta, phi, delta, vp, tpm)
    return UnconstrainedCoeffs(t0, v0, jerk, u0, t0 + T, "CaseB", res)


def solve_case_b_matched_speed(
    t0: float,
    L: float,
    beta: float,
    phi: float,
    delta: float,
    v_prev_terminal: float,
    t_prev_m: float,
    v_max: float = math.inf,
) -> tuple[float, UnconstrainedCoeffs]:
    """Entry speed for which the case-B optimum ends at the predecessor's terminal speed.

    With ``v(t_m)`` pinned to ``v_prev_terminal`` the tangency row fixes the
    travel time outright; the transversality row is then quadratic in ``v0``.
    """
    vp, tpm = v_prev_terminal, t_prev_m
    T = tpm - t0 + (phi * vp + delta) / vp
    if not T > 0:
        raise SolverError(f"matched terminal speed needs t_m > t0 (got travel time {T})")
    v0 = Polynomial([0.0, 1.0])
    Pp = L - v0 * T
    Q = vp - v0
    jerk = (6.0 * Q * T - 12.0 * Pp) / T ** 3
    u0 = (Q - jerk * T * T / 2.0) / T
    uT = jerk * T + u0
    R = beta + jerk * vp - 0.5 * uT * uT + uT * vp / phi
    cands = []
    for r in np.atleast_1d(R.roots()):
        if abs(r.imag) > 1e-9 * max(1.0, abs(r)):
            continue
        v = r.real
        if not 0.0 < v <= v_max:
            continue
        j, u, _ = _case_b_coeffs_at(T, t0, v, L, phi, delta, vp, tpm)
        if _min_speed(j, u, v, T) <= 0.0:
            continue
        cands.append((_objective_local(j, u, T, beta), v, j, u))
    if not cands:
        raise SolverError("no admissible entry speed matches the predecessor's terminal speed",
                          candidates=list(np.atleast_1d(R.roots())))
    _, v, j, u = min(cands)
    sol = UnconstrainedCoeffs(t0, v, j, u, t0 + T, "CaseB")
    res = residuals_case_b(sol, L, beta, phi, delta, vp, tpm)
    return v, UnconstrainedCoeffs(t0, v, j, u, t0 + T, "CaseB", res)
