"""Trajectories with an active safety arc.

A constrained plan has up to three pieces::

    [t0, t1]  unconstrained cubic reaching the headway boundary tangentially
    [t1, t2]  riding the boundary: x + phi*v + delta = x_p, u = (v_p - v)/phi
    [t2, t_m] unconstrained cubic to the merging point (absent if the arc
              never releases before x = L)

The entry time ``t1`` is the only free parameter once the exit conditions are
imposed, so the plan is found by minimising J*(t1) over the admissible entry
times.  Everything is in closed form: the boundary arc solves the linear ODE
``phi*x' + x = x_p - delta`` whose forcing is a quasi-polynomial, and each exit
system collapses to one scalar equation in ``t2``.
"""
from __future__ import annotations

import heapq
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .model import (
    ExpSegment,
    InfeasibleError,
    PolySegment,
    ScenarioParams,
    SolverError,
    TIME_EPS,
    Trajectory,
    _der,
    _shift,
)
from .safety import TOL_ACTIVE, TOL_GAP, check_window
from .unconstrained import solve_case_a, solve_case_b

T1_GRID = 0.05
T1_XTOL = 1e-4
T0_EXCLUSION = 1e-3
I_GRID = 1e-2
I_XTOL = 1e-6
EXIT_GRID = 0.05
_UNUSABLE = 1e12


@dataclass(frozen=True)
class ConstrainedPlan:
    t1: float
    t2: Optional[float]
    pre_arc: PolySegment
    arc: tuple
    post_arc: Optional[PolySegment]
    t_m: float
    J_star: float
    infeasible_set: tuple = ()
    kind: str = "arc"
    j_curve: tuple = field(default=(), repr=False, compare=False)

    @property
    def segments(self) -> tuple:
        segs = [self.pre_arc, *self.arc]
        if self.post_arc is not None:
            segs.append(self.post_arc)
        return tuple(segs)

    def trajectory(self, hold_until: Optional[float] = None) -> Trajectory:
        return Trajectory(self.segments, hold_until=hold_until)


# --- pre-arc ------------------------------------------------------------------


def pre_arc_coeffs(t1: float, t0: float, v0: float, leader_xv: tuple, phi: float, delta: float) -> PolySegment:
    """Cubic from (t0, x=0, v0) that touches the headway boundary tangentially at t1.

    ``leader_xv`` is the leader's (x_p, v_p) at t1.  The result stores local
    coefficients; ``.absolute()`` gives the absolute-time form.
    """
    s = t1 - t0
    if not s > 0:
        raise ValueError("t1 must exceed t0")
    xp, vp = leader_xv[0], leader_xv[1]
    m11 = s + s * s / (2.0 * phi)
    m12 = 1.0 + s / phi
    m21 = s ** 3 / 6.0 + phi * s * s / 2.0
    m22 = s * s / 2.0 + phi * s
    r1 = (vp - v0) / phi
    r2 = xp - delta - v0 * s - phi * v0
    det = m11 * m22 - m12 * m21
    if abs(det) < 1e-300 or not math.isfinite(det):
        raise SolverError(f"singular entry system at t1={t1}")
    a = (r1 * m22 - m12 * r2) / det
    b = (m11 * r2 - m21 * r1) / det
    return PolySegment(t0, t1, a, b, v0, 0.0)


def _pre_arc_batch(t1s, t0, v0, xp, vp, phi, delta):
    s = np.asarray(t1s, dtype=float) - t0
    m11 = s + s * s / (2.0 * phi)
    m12 = 1.0 + s / phi
    m21 = s ** 3 / 6.0 + phi * s * s / 2.0
    m22 = s * s / 2.0 + phi * s
    r1 = (vp - v0) / phi
    r2 = xp - delta - v0 * s - phi * v0
    det = m11 * m22 - m12 * m21
    return (r1 * m22 - m12 * r2) / det, (m11 * r2 - m21 * r1) / det


# --- boundary arc -------------------------------------------------------------


def _boundary_piece(leader_piece, t_start, t_end, x_start, phi, delta) -> ExpSegment:
    """Solve phi*x' + x = x_p - delta on one leader piece, x(t_start) = x_start."""
    if leader_piece.t_start != t_start:
        leader_piece = leader_piece.clipped(t_start, leader_piece.t_end)
    if leader_piece.expo and not math.isclose(leader_piece.phi, phi, rel_tol=1e-12):
        raise ValueError("leader arc uses a different headway coefficient")
    F = list(leader_piece.base)
    F[0] -= delta
    # particular solution sum_k (-phi)^k F^(k)
    W = [0.0] * len(F)
    cur = tuple(F)
    w = 1.0
    while cur and any(cur):
        for k, c in enumerate(cur):
            W[k] += w * c
        cur = _der(cur) if len(cur) > 1 else ()
        w *= -phi
    # exp-weighted forcing e^{-s/phi} E_p contributes e^{-s/phi} * integral(E_p)/phi
    S = [0.0] + [c / (phi * (k + 1)) for k, c in enumerate(leader_piece.expo)]
    S[0] = x_start - W[0]
    kind = "arc" if leader_piece.expo else ("hold" if leader_piece.a == 0.0 and leader_piece.b == 0.0 else "poly")
    return ExpSegment(t_start, t_end, phi, tuple(W), tuple(S), kind)


def arc_solution(
    entry_state: tuple,
    leader_traj: Trajectory,
    t1: float,
    t_end: float,
    phi: float,
    delta: float,
) -> tuple:
    """Boundary-riding arc over [t1, t_end], split at every leader breakpoint.

    ``entry_state`` is the follower's (x, v, u) at t1; only x enters the
    solution because the ODE is first order in x.  Speed and control at t1 are
    implied by the tangency conditions of the entry.
    """
    x = entry_state[0]
    out = []
    for lp in leader_traj.pieces(t1, t_end):
        lo, hi = max(lp.t_start, t1), min(lp.t_end, t_end)
        if hi - lo <= TIME_EPS:
            continue
        seg = _boundary_piece(lp, lo, hi, x, phi, delta)
        out.append(seg)
        x = seg.state(hi)[0]
    return tuple(out)


class _Arc:
    """Chain of boundary segments with fast vectorized evaluation."""

    def __init__(self, segs):
        self.segs = segs
        self.starts = np.array([s.t_start for s in segs])
        self._starts = [s.t_start for s in segs]
        self.t_end = segs[-1].t_end

    def state(self, t):
        k = max(0, bisect_right(self._starts, t) - 1)
        return self.segs[k].state(t)

    def states(self, ts):
        ts = np.asarray(ts, dtype=float)
        idx = np.clip(np.searchsorted(self.starts, ts, side="right") - 1, 0, len(self.segs) - 1)
        x = np.empty_like(ts)
        v = np.empty_like(ts)
        u = np.empty_like(ts)
        for k, seg in enumerate(self.segs):
            m = idx == k
            if m.any():
                x[m], v[m], u[m] = seg.states(ts[m])
        return x, v, u

    def clipped_to(self, t_stop):
        out = []
        for s in self.segs:
            if s.t_start >= t_stop - TIME_EPS:
                break
            out.append(s if s.t_end <= t_stop else s.clipped(s.t_start, t_stop))
        return tuple(out)

    def energy(self, t_stop):
        return sum(s.energy(s.t_start, min(s.t_end, t_stop)) for s in self.segs if s.t_start < t_stop)

    def grid(self, t1, t_hi):
        n = max(3, int(math.ceil((t_hi - t1) / EXIT_GRID)) + 1)
        return np.linspace(t1 + 1e-6, t_hi, n)

    def time_at_position(self, L):
        """First time the arc reaches x = L, or None within its horizon."""
        for s in self.segs:
            if s.state(s.t_end)[0] >= L:
                if s.state(s.t_start)[0] >= L:
                    return s.t_start
                return brentq(lambda t: s.state(t)[0] - L, s.t_start, s.t_end, xtol=1e-12)
        return None


class _RefArc:
    """One boundary solution over the planning window, sampled once.

    The boundary ODE is linear, so the arc entered at (t1, x1) is this
    reference plus ``c*exp(-(t - t1)/phi)`` with ``c = x1 - R(t1)``.
    """

    def __init__(self, leader: Trajectory, t_from: float, t_to: float, phi: float, delta: float):
        self.phi = phi
        self.arc = _Arc(arc_solution((0.0, 0.0), leader, t_from, t_to, phi, delta))
        n = int(math.floor((t_to - t_from) / EXIT_GRID)) + 1
        self.ts = t_from + EXIT_GRID * np.arange(n)
        self.xs, self.vs, self.us = self.arc.states(self.ts)

    def entered(self, t1: float, x1: float) -> "_ShiftedArc":
        return _ShiftedArc(self, t1, x1 - self.arc.state(t1)[0])


class _ShiftedArc:
    def __init__(self, ref: _RefArc, t1: float, c: float):
        self.ref, self.t1, self.c = ref, t1, c
        self.t_end = ref.arc.t_end

    def _corr(self, ts):
        w = self.c * np.exp(-(ts - self.t1) / self.ref.phi)
        k = 1.0 / self.ref.phi
        return w, -k * w, k * k * w

    def state(self, t):
        x, v, u = self.ref.arc.state(t)
        w = self.c * math.exp(-(t - self.t1) / self.ref.phi)
        k = 1.0 / self.ref.phi
        return x + w, v - k * w, u + k * k * w

    def states(self, ts):
        ts = np.asarray(ts, dtype=float)
        x, v, u = self.ref.arc.states(ts)
        wx, wv, wu = self._corr(ts)
        return x + wx, v + wv, u + wu

    def _sampled(self, t_hi):
        r = self.ref
        k0 = int(np.searchsorted(r.ts, self.t1 + 1e-6, side="right"))
        k1 = int(np.searchsorted(r.ts, t_hi, side="left"))
        ts = r.ts[k0:k1]
        wx, wv, wu = self._corr(ts)
        return ts, r.xs[k0:k1] + wx, r.vs[k0:k1] + wv, r.us[k0:k1] + wu

    def grid(self, t1, t_hi):
        ts = self._sampled(t_hi)[0]
        return np.concatenate(([t1 + 1e-6], ts, [t_hi]))

    def grid_states(self, t1, t_hi):
        ts, x, v, u = self._sampled(t_hi)
        a = self.state(t1 + 1e-6)
        b = self.state(t_hi)
        return (
            np.concatenate(([t1 + 1e-6], ts, [t_hi])),
            np.concatenate(([a[0]], x, [b[0]])),
            np.concatenate(([a[1]], v, [b[1]])),
            np.concatenate(([a[2]], u, [b[2]])),
        )

    def reach_bracket(self, L):
        """Sample interval in which the arc first reaches x = L, or None."""
        r = self.ref
        k0 = int(np.searchsorted(r.ts, self.t1 + 1e-6, side="right"))
        ts = r.ts[k0:]
        x = r.xs[k0:] + self.c * np.exp(-(ts - self.t1) / r.phi)
        k = int(np.argmax(x >= L)) if x.size else 0
        if x.size == 0 or x[k] < L:
            if self.state(self.t_end)[0] < L:
                return None
            return (ts[-1] if ts.size else self.t1), self.t_end
        return (self.t1 if k == 0 else ts[k - 1]), ts[k]

    def time_at_position(self, L, bracket=None):
        br = bracket if bracket is not None else self.reach_bracket(L)
        if br is None:
            return None
        lo, hi = br
        if self.state(lo)[0] >= L:
            return lo
        return brentq(lambda t: self.state(t)[0] - L, lo, hi, xtol=1e-12)

    def clipped_to(self, t_stop):
        out = []
        for seg in self.ref.arc.segs:
            if seg.t_end <= self.t1 + TIME_EPS:
                continue
            if seg.t_start >= t_stop - TIME_EPS:
                break
            lo, hi = max(seg.t_start, self.t1), min(seg.t_end, t_stop)
            if hi - lo <= TIME_EPS:
                continue
            off = lo - seg.t_start
            if off:
                g = math.exp(-off / seg.phi)
                base = _shift(seg.base, off)
                expo = [g * c for c in _shift(seg.expo, off)] if seg.expo else [0.0]
            else:
                base, expo = seg.base, list(seg.expo) or [0.0]
            expo[0] += self.c * math.exp(-(lo - self.t1) / self.ref.phi)
            out.append(ExpSegment(lo, hi, seg.phi, base, tuple(expo), seg.leader_kind))
        return tuple(out)


# --- infeasible entry times -----------------------------------------------------


def _intervals_from_mask(ts, mask, refine: Optional[Callable] = None):
    out = []
    n = len(ts)
    k = 0
    while k < n:
        if not mask[k]:
            k += 1
            continue
        j = k
        while j + 1 < n and mask[j + 1]:
            j += 1
        lo = ts[k]
        hi = ts[j]
        if refine is not None and k > 0:
            lo = refine(ts[k - 1], ts[k])
        if refine is not None and j < n - 1:
            hi = refine(ts[j], ts[j + 1])
        out.append((float(lo), float(hi)))
        k = j + 1
    return out


def _first_contact_violated(ts, t0, v0, a, b, leader_traj, phi, delta, m=200):
    """Definitional test per entry time: does its pre-arc breach the boundary before t1?"""
    frac = np.linspace(0.0, 1.0, m, endpoint=False)
    S = (ts - t0)[:, None] * frac[None, :]
    X = a[:, None] * S ** 3 / 6.0 + b[:, None] * S * S / 2.0 + v0 * S
    V = a[:, None] * S * S / 2.0 + b[:, None] * S + v0
    XP = leader_traj.states((t0 + S).ravel())[0].reshape(S.shape)
    return np.any(X + phi * V + delta - XP > TOL_GAP, axis=1)


def infeasible_set(
    t0: float, v0: float, leader_traj: Trajectory, t_range: tuple, phi: float, delta: float
) -> list:
    """Entry times that cannot be the first contact with the headway boundary.

    With a polynomial leader the local test is the sign of
    ``h(t1) = u(t1) + phi*a - u_p(t1)``; a positive value means the slack
    was already negative just before t1.  The definitional test (any
    negative slack on [t0, t1)) is applied as well, which also covers
    leaders that are themselves on a boundary arc.
    """
    lo, hi = t_range
    ts = np.arange(lo, hi + 0.5 * I_GRID, I_GRID)
    ts = ts[ts < hi - 1e-9]
    ts = np.append(ts, hi)
    if ts.size < 2:
        ts = np.array([lo, hi])
    poly_leader = all(isinstance(p, PolySegment) for p in leader_traj.pieces(t0, hi))
    xp, vp, up = leader_traj.states(ts)
    a, b = _pre_arc_batch(ts, t0, v0, xp, vp, phi, delta)
    bad = np.zeros(ts.size, dtype=bool)

    def bad_at(t):
        pa = pre_arc_coeffs(t, t0, v0, leader_traj.state(t)[:2], phi, delta)
        return bool(_first_contact_violated(np.array([t]), t0, v0, np.array([pa.a]), np.array([pa.b]),
                                            leader_traj, phi, delta, 400)[0])

    def hfun(t):
        pa = pre_arc_coeffs(t, t0, v0, leader_traj.state(t)[:2], phi, delta)
        return pa.a * (t - t0) + pa.b + phi * pa.a - leader_traj.state(t)[2]

    def refine(t_a, t_b):
        if poly_leader and (hfun(t_a) > 0) != (hfun(t_b) > 0):
            return brentq(hfun, t_a, t_b, xtol=I_XTOL)
        left = bad_at(t_a)
        while t_b - t_a > I_XTOL:
            mid = 0.5 * (t_a + t_b)
            if bad_at(mid) == left:
                t_a = mid
            else:
                t_b = mid
        return 0.5 * (t_a + t_b)

    if poly_leader:
        h = a * (ts - t0) + b + phi * a - up
        bad |= h > 0
    rest = ~bad
    bad[rest] = _first_contact_violated(ts[rest], t0, v0, a[rest], b[rest], leader_traj, phi, delta)
    return _intervals_from_mask(ts, bad, refine)


# --- exit systems -------------------------------------------------------------


def _exit_a_rows(x2, v2, u2, L, beta):
    rem = L - x2
    disc = v2 * v2 + 4.0 * (u2 / 3.0) * rem
    with np.errstate(invalid="ignore", divide="ignore"):
        T = 2.0 * rem / (v2 + np.sqrt(disc))
        r = beta - (u2 / T) * (v2 + u2 * T / 2.0)
    ok = (u2 > 0) & (rem > 0) & (disc >= 0) & (T > 0)
    return np.where(ok, r, np.nan), T


def _exit_b_rows(t2, x2, v2, u2, L, beta, phi, delta, vp, tpm):
    rem = L - x2
    A = vp + phi * u2 / 2.0
    B = vp * (t2 - tpm) - delta + 2.0 * phi * v2
    C = -3.0 * phi * rem
    disc = B * B - 4.0 * A * C
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = np.sqrt(disc)
        # numerically stable positive root of A T^2 + B T + C with C < 0
        T = np.where(B >= 0, -2.0 * C / (B + sq), (-B + sq) / (2.0 * A))
        a = 6.0 * (rem - v2 * T - u2 * T * T / 2.0) / T ** 3
        vT = 3.0 * rem / T - 2.0 * v2 - u2 * T / 2.0
        uT = a * T + u2
        r = beta + a * vT - 0.5 * uT * uT + uT * vp / phi
    ok = (rem > 0) & (disc >= 0) & (T > 0) & (vT > 0)
    return np.where(ok, r, np.nan), T, a


def _exit_a_scalar(x2, v2, u2, L, beta):
    rem = L - x2
    disc = v2 * v2 + 4.0 * (u2 / 3.0) * rem
    if not (u2 > 0 and rem > 0 and disc >= 0):
        return math.nan, math.nan
    T = 2.0 * rem / (v2 + math.sqrt(disc))
    return beta - (u2 / T) * (v2 + u2 * T / 2.0), T


def _exit_b_scalar(t2, x2, v2, u2, L, beta, phi, delta, vp, tpm):
    rem = L - x2
    A = vp + phi * u2 / 2.0
    B = vp * (t2 - tpm) - delta + 2.0 * phi * v2
    C = -3.0 * phi * rem
    disc = B * B - 4.0 * A * C
    if not (rem > 0 and disc >= 0):
        return math.nan, math.nan, math.nan
    sq = math.sqrt(disc)
    den = B + sq if B >= 0 else 2.0 * A
    if den == 0.0:
        return math.nan, math.nan, math.nan
    T = -2.0 * C / (B + sq) if B >= 0 else (-B + sq) / (2.0 * A)
    if not T > 0:
        return math.nan, math.nan, math.nan
    a = 6.0 * (rem - v2 * T - u2 * T * T / 2.0) / T ** 3
    vT = 3.0 * rem / T - 2.0 * v2 - u2 * T / 2.0
    if not vT > 0:
        return math.nan, math.nan, math.nan
    uT = a * T + u2
    return beta + a * vT - 0.5 * uT * uT + uT * vp / phi, T, a


def _roots_in_order(ts, rs, f):
    """Sign changes of the sampled residual, polished by brentq, earliest first."""
    with np.errstate(invalid="ignore"):
        hits = np.nonzero(rs[:-1] * rs[1:] <= 0)[0]
    for k in hits:
        if rs[k] == 0.0:
            yield float(ts[k])
            continue
        try:
            yield brentq(f, ts[k], ts[k + 1], xtol=1e-12)
        except ValueError:
            continue


def _post_arc_safe(post: PolySegment, leader: Optional[Trajectory], phi, delta) -> bool:
    if leader is None:
        return True
    q = np.linspace(post.t_start, post.t_end, 400)
    x, v, _ = post.states(q)
    xp = leader.states(q)[0]
    return bool(np.all(xp - x - phi * v - delta >= -TOL_GAP))


def _arc_grid(arc, t1, t_hi):
    if hasattr(arc, "grid_states"):
        return arc.grid_states(t1, t_hi)
    ts = arc.grid(t1, t_hi)
    return (ts, *arc.states(ts))


def exit_system_case_a(
    t1: float,
    arc: _Arc,
    t0: float,
    L: float,
    beta: float,
    t_reach_L: float,
    leader: Optional[Trajectory] = None,
    phi: float = 0.0,
    delta: float = 0.0,
):
    """Earliest release point of the arc for a free-terminal (same-lane) plan.

    Returns (post_segment, t_m, t2) or None when the arc never releases before
    reaching the merging point.  With ``leader`` given, release points whose
    free continuation would breach the headway are skipped.
    """
    ts, x, v, u = _arc_grid(arc, t1, t_reach_L)
    rs, _ = _exit_a_rows(x, v, u, L, beta)

    def f(t):
        return _exit_a_scalar(*arc.state(t), L, beta)[0]

    for t2 in _roots_in_order(ts, rs, f):
        x2, v2, u2 = arc.state(t2)
        if x2 >= L:
            break
        _, T = _exit_a_scalar(x2, v2, u2, L, beta)
        if not T > 0:
            continue
        post = PolySegment(t2, t2 + T, -u2 / T, u2, v2, x2)
        if _post_arc_safe(post, leader, phi, delta):
            return post, t2 + T, t2
    return None


def exit_system_case_b(
    t1: float,
    arc: _Arc,
    t0: float,
    L: float,
    beta: float,
    phi: float,
    delta: float,
    v_prev_terminal: float,
    t_prev_m: float,
    t_reach_L: float,
    leader: Optional[Trajectory] = None,
):
    """Earliest release point when the plan must end tangent to the other-lane predecessor.

    Returns (post_segment, t_m, t2) or None.
    """
    vp, tpm = v_prev_terminal, t_prev_m
    ts, x, v, u = _arc_grid(arc, t1, t_reach_L)
    rs, _, _ = _exit_b_rows(ts, x, v, u, L, beta, phi, delta, vp, tpm)

    def f(t):
        return _exit_b_scalar(t, *arc.state(t), L, beta, phi, delta, vp, tpm)[0]

    for t2 in _roots_in_order(ts, rs, f):
        x2, v2, u2 = arc.state(t2)
        if x2 >= L:
            break
        _, T, a = _exit_b_scalar(t2, x2, v2, u2, L, beta, phi, delta, vp, tpm)
        if not T > 0:
            continue
        post = PolySegment(t2, t2 + T, a, u2, v2, x2)
        if _post_arc_safe(post, leader, phi, delta):
            return post, t2 + T, t2
    return None


# --- objective over entry time ------------------------------------------------


def objective_of_t1(pieces, beta: float) -> float:
    """beta*(t_m - t0) + integral of u^2/2 over the given contiguous pieces."""
    pieces = list(pieces)
    if not pieces:
        return 0.0
    return beta * (pieces[-1].t_end - pieces[0].t_start) + sum(p.energy() for p in pieces)


@dataclass
class _Context:
    t0: float
    v0: float
    leader: Trajectory
    params: ScenarioParams
    horizon: float
    merge: Optional[tuple] = None  # (v_prev_terminal, t_prev_m) for the tangency exit
    ref: Optional[_RefArc] = None


def _candidate(ctx: _Context, t1: float, verify: bool = True):
    """Full plan pieces for one entry time, or None if that entry time is unusable.

    With ``verify`` off the free continuation after the arc is not checked
    against the leader (a screening value; see _optimise_entry).
    """
    p = ctx.params
    xp, vp, _ = ctx.leader.state(t1)
    try:
        pre = pre_arc_coeffs(t1, ctx.t0, ctx.v0, (xp, vp), p.phi, p.delta)
    except SolverError:
        return None
    x1, v1, _ = pre.state(t1)
    s = t1 - ctx.t0
    if not (x1 < p.L and v1 > 0):
        return None
    if pre.a != 0.0:
        sv = -pre.b / pre.a
        if 0 < sv < s and pre.state(ctx.t0 + sv)[1] <= 0:
            return None
    if ctx.ref is None:
        ctx.ref = _RefArc(ctx.leader, ctx.t0, ctx.horizon, p.phi, p.delta)
    arc = ctx.ref.entered(t1, x1)
    # exits are scanned up to the end of the sample interval that contains x = L;
    # the exact crossing is only needed when the arc runs all the way to L
    br = arc.reach_bracket(p.L)
    if br is None:
        return None
    t_L = br[1]
    leader = ctx.leader if verify else None
    if ctx.merge is None:
        ex = exit_system_case_a(t1, arc, ctx.t0, p.L, p.beta, t_L, leader, p.phi, p.delta)
    else:
        ex = exit_system_case_b(
            t1, arc, ctx.t0, p.L, p.beta, p.phi, p.delta, ctx.merge[0], ctx.merge[1], t_L, leader
        )
    if ex is None:
        if ctx.merge is not None:
            return None
        t_L = arc.time_at_position(p.L, br)
        arc_segs = arc.clipped_to(t_L)
        post, t2, t_m = None, None, t_L
    else:
        post, t_m, t2 = ex
        arc_segs = arc.clipped_to(t2)
    pieces = [pre, *arc_segs] + ([post] if post is not None else [])
    J = objective_of_t1(pieces, p.beta)
    return J, t1, t2, pre, arc_segs, post, t_m


def _pre_arc_ok(ctx, pre, t1):
    """True when the pre-arc keeps nonnegative slack before t1 (first-contact check)."""
    p = ctx.params
    q = np.linspace(ctx.t0, t1, 200)
    x, v, _ = pre.states(q)
    xp = ctx.leader.states(q)[0]
    return bool(np.all(xp - x - p.phi * v - p.delta >= -1e-6))


def _complement(lo, hi, excluded):
    out = []
    cur = lo
    for a, b in sorted(excluded):
        if b <= cur:
            continue
        if a > cur:
            out.append((cur, min(a, hi)))
        cur = max(cur, b)
        if cur >= hi:
            break
    if cur < hi:
        out.append((cur, hi))
    return [(a, b) for a, b in out if b > a]


def _optimise_entry(ctx: _Context, t_upper: float):
    """Grid plus golden/Brent refinement of J*(t1) over the admissible entry times."""
    lo = ctx.t0 + T0_EXCLUSION
    if not t_upper > lo:
        raise InfeasibleError("no room for an entry time after the CZ entry")
    I = infeasible_set(ctx.t0, ctx.v0, ctx.leader, (lo, t_upper), ctx.params.phi, ctx.params.delta)
    F = _complement(lo, t_upper, I)
    if not F:
        raise InfeasibleError(f"every entry time in ({ctx.t0}, {t_upper}] is infeasible")
    found = []
    curve = {}
    for a, b in F:
        n = max(2, int(math.ceil((b - a) / T1_GRID)) + 1)
        for t1 in np.linspace(a, b, n):
            c = _candidate(ctx, float(t1), verify=False)
            if c is None:
                continue
            curve[len(found)] = (float(t1), c[0])
            found.append((c[0], len(found), c, (a, b), n, c[5] is None))
    # the post-arc headway and first-contact checks are only needed on the
    # winner: walk up in J order, re-solving screened candidates with checks on
    heapq.heapify(found)
    best = None
    while found:
        J0, k, c, ab, n, checked = heapq.heappop(found)
        if not checked:
            cc = _candidate(ctx, c[1])
            if cc is None:
                curve.pop(k, None)
                continue
            curve[k] = (c[1], cc[0])
            if cc[0] != J0:
                heapq.heappush(found, (cc[0], k, cc, ab, n, True))
                continue
            c = cc
        if _pre_arc_ok(ctx, c[3], c[1]):
            best = (c, ab, n)
            break
        curve.pop(k, None)
    curve = [curve[k] for k in sorted(curve)]
    if best is None:
        raise InfeasibleError("no admissible entry time yields a complete plan")
    c, (a, b), n = best
    step = (b - a) / (n - 1)
    t_star = c[1]

    def J(t):
        cc = _candidate(ctx, float(t))
        # large finite penalty keeps the bounded search's parabola steps well defined
        return _UNUSABLE if cc is None else cc[0]

    lo_r, hi_r = max(a, t_star - step), min(b, t_star + step)
    if hi_r - lo_r > T1_XTOL:
        res = minimize_scalar(J, bounds=(lo_r, hi_r), method="bounded", options={"xatol": T1_XTOL})
        if res.fun < min(c[0], _UNUSABLE):
            cc = _candidate(ctx, float(res.x))
            if cc is not None and _pre_arc_ok(ctx, cc[3], float(res.x)):
                c = cc
    return c, tuple(I), tuple(curve), abs(c[1] - F[-1][1]) < step + 1e-9


def _leader_for_planning(leader: Trajectory) -> Trajectory:
    return leader.with_hold(math.inf)


def _planning_horizon(leader: Trajectory, params: ScenarioParams) -> float:
    return leader.t_m + 2.0 * params.phi + params.delta / params.v_min + params.L / params.v_min


def _verified(plan: ConstrainedPlan, leader: Trajectory, params: ScenarioParams) -> ConstrainedPlan:
    """Re-check the headway over the whole horizon; a breach here is a solver defect."""
    tr = plan.trajectory()
    rep = check_window(tr, leader, tr.t0, tr.t_m, params.phi, params.delta)
    if rep.min_gap_slack < -TOL_ACTIVE:
        raise SolverError(
            f"constrained plan breaches the headway by {-rep.min_gap_slack:.3e} m at t={rep.t_min:.4f}"
        )
    return plan


def algorithm1(t0: float, v0: float, leader_plan: Trajectory, params: ScenarioParams) -> ConstrainedPlan:
    """Safety-constrained plan behind a same-lane leader that is also the FIFO predecessor."""
    leader = _leader_for_planning(leader_plan)
    base = solve_case_a(t0, v0, params.L, params.beta)
    ctx = _Context(t0, v0, leader, params, _planning_horizon(leader, params))
    c, I, curve, at_end = _optimise_entry(ctx, base.t_m)
    J, t1, t2, pre, arc, post, t_m = c
    plan = ConstrainedPlan(t1, t2, pre, tuple(arc), post, t_m, J, I, "arc", curve)
    if at_end:
        term = _terminal_branch(t0, v0, leader, params)
        if term is not None and term.J_star < plan.J_star:
            plan = ConstrainedPlan(
                term.t1, None, term.pre_arc, (), None, term.t_m, term.J_star, I, "terminal", curve
            )
    return _verified(plan, leader, params)


def _terminal_branch(t0, v0, leader, params) -> Optional[ConstrainedPlan]:
    """Headway imposed only at t_m against the same-lane leader (boundary touched at the end)."""
    try:
        sol = solve_case_b(
            t0, v0, params.L, params.beta, params.phi, params.delta, leader.terminal_speed, leader.t_m
        )
    except SolverError:
        return None
    traj = sol.trajectory()
    rep = check_window(traj, leader, t0, traj.t_m, params.phi, params.delta)
    if rep.violated:
        return None
    seg = sol.segment()
    return ConstrainedPlan(sol.t_m, None, seg, (), None, sol.t_m, objective_of_t1([seg], params.beta))


def algorithm2(
    t0: float, v0: float, leader_plan: Trajectory, prev_fifo_plan: Trajectory, params: ScenarioParams
) -> ConstrainedPlan:
    """Safety-constrained plan behind a same-lane leader when the FIFO predecessor is in the other lane."""
    leader = _leader_for_planning(leader_plan)
    merge = (prev_fifo_plan.terminal_speed, prev_fifo_plan.t_m)
    try:
        base = solve_case_b(t0, v0, params.L, params.beta, params.phi, params.delta, *merge)
        t_upper = base.t_m
    except SolverError:
        t_upper = solve_case_a(t0, v0, params.L, params.beta).t_m
    ctx = _Context(t0, v0, leader, params, _planning_horizon(leader, params), merge)
    c, I, curve, _ = _optimise_entry(ctx, t_upper)
    J, t1, t2, pre, arc, post, t_m = c
    return _verified(ConstrainedPlan(t1, t2, pre, tuple(arc), post, t_m, J, I, "arc", curve), leader, params)
