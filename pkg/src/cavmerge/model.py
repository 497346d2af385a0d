"""Domain types and closed-form trajectory evaluation.

Every segment stores its coefficients in *local* time ``s = t - t_start``.
Absolute-time cubic coefficients lose all precision once ``t`` reaches a few
thousand seconds, which a one-hour simulation does.  Absolute-time
coefficients are still available through :meth:`PolySegment.absolute`.

A segment's position is a quasi-polynomial

    x(s) = B(s) + exp(-s / phi) * E(s)

with ``B`` and ``E`` ordinary polynomials (ascending coefficient tuples).
Unconstrained arcs have ``E == 0`` and cubic ``B``.  Arcs riding the safety
boundary have a nonzero ``E``; riding a leader that is itself on such an arc
raises the degree of ``E`` by one, so recursive constrained leaders stay in
closed form.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
from numpy.polynomial import polynomial as P

CONTINUITY_TOL_X = 1e-9
CONTINUITY_TOL_V = 1e-9
CONTINUITY_TOL_U = 1e-6
# breakpoint lookup slack; times are compared after float arithmetic
TIME_EPS = 1e-9


class CavMergeError(Exception):
    """Base class for all errors raised by this package."""


class OutOfDomainError(CavMergeError):
    """A trajectory was evaluated outside [t0, t_m] and outside its hold window."""


class SolverError(CavMergeError):
    """A root-finding or linear solve failed for admissible-looking inputs."""

    def __init__(self, message: str, candidates: Sequence = ()):
        super().__init__(message)
        self.candidates = list(candidates)


class InfeasibleError(CavMergeError):
    """No feasible plan exists for this vehicle (e.g. an empty entry-time set)."""


class Lane(str, Enum):
    MAIN = "main"
    MERGING = "merging"


def default_zeta(phi: float, delta: float, v_min: float) -> float:
    return phi + delta / v_min + 1.0


@dataclass(frozen=True)
class ScenarioParams:
    """Geometry, limits and weights shared by every vehicle in a scenario.

    Units are SI throughout. ``beta`` is the unnormalised time weight; use
    :func:`alpha_to_beta` to convert from the normalised weight.
    """

    L: float = 400.0
    phi: float = 1.8
    delta: float = 0.0
    v_min: float = 10.0
    v_max: float = 30.0
    u_min: float = -3.924
    u_max: float = 3.924
    beta: float = 2.667
    zeta: Optional[float] = None
    arrival_rate_per_lane: float = 600.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.zeta is None:
            object.__setattr__(self, "zeta", default_zeta(self.phi, self.delta, self.v_min))
        problems = []
        if not self.L > 0:
            problems.append("L must be > 0")
        if not self.phi > 0:
            problems.append("phi must be > 0")
        if not self.delta >= 0:
            problems.append("delta must be >= 0")
        if not 0 < self.v_min <= self.v_max:
            problems.append("need 0 < v_min <= v_max")
        if not self.u_min < 0 < self.u_max:
            problems.append("need u_min < 0 < u_max")
        if not self.beta >= 0:
            problems.append("beta must be >= 0")
        if not self.zeta > self.phi:
            problems.append("zeta must exceed phi")
        if self.arrival_rate_per_lane < 0:
            problems.append("arrival_rate_per_lane must be >= 0")
        if problems:
            raise ValueError("invalid ScenarioParams: " + "; ".join(problems))


def alpha_to_beta(alpha: float, u_min: float, u_max: float) -> float:
    """Convert the normalised time/energy weight to the time penalty beta."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    return alpha * max(u_max * u_max, u_min * u_min) / (2.0 * (1.0 - alpha))


def beta_to_alpha(beta: float, u_min: float, u_max: float) -> float:
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    k = max(u_max * u_max, u_min * u_min) / 2.0
    return beta / (beta + k)


# --- quasi-polynomial kernels -------------------------------------------------


def _horner(c: Sequence[float], s):
    acc = 0.0
    for coef in reversed(c):
        acc = acc * s + coef
    return acc


def _der(c: Sequence[float]) -> tuple:
    return tuple(k * c[k] for k in range(1, len(c))) or (0.0,)


def _shift(c: Sequence[float], off: float) -> tuple:
    """Coefficients of p(s + off) given those of p(s)."""
    if off == 0.0:
        return tuple(c)
    out = []
    cur = tuple(c)
    fact = 1.0
    for k in range(len(c)):
        if k:
            cur = _der(cur)
            fact *= k
        out.append(_horner(cur, off) / fact)
    return tuple(out)


def _exp_poly_integral(c: Sequence[float], lam: float, s1: float) -> float:
    """Integral over [0, s1] of exp(-lam*s) * p(s)."""
    if len(c) == 0:
        return 0.0
    if lam == 0.0:
        return sum(ck * s1 ** (k + 1) / (k + 1) for k, ck in enumerate(c))
    # antiderivative: -exp(-lam s) * sum_k p^(k)(s) / lam^(k+1)
    acc1 = 0.0
    acc0 = 0.0
    cur = tuple(c)
    scale = 1.0 / lam
    while cur and any(cur):
        acc1 += scale * _horner(cur, s1)
        acc0 += scale * cur[0]
        cur = tuple(k * cur[k] for k in range(1, len(cur)))
        scale /= lam
    return acc0 - math.exp(-lam * s1) * acc1


def _pmul(p: Sequence[float], q: Sequence[float]) -> tuple:
    if not p or not q:
        return ()
    out = [0.0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        for j, b in enumerate(q):
            out[i + j] += a * b
    return tuple(out)


# --- segments -----------------------------------------------------------------


@dataclass(frozen=True)
class PolySegment:
    """Unconstrained arc: u = a*s + b, v = a s^2/2 + b s + c, x = a s^3/6 + b s^2/2 + c s + d.

    ``s = t - t_start``. ``c`` and ``d`` are therefore the speed and position at
    ``t_start``.
    """

    t_start: float
    t_end: float
    a: float
    b: float
    c: float
    d: float

    @property
    def base(self) -> tuple:
        return (self.d, self.c, self.b / 2.0, self.a / 6.0)

    @property
    def expo(self) -> tuple:
        return ()

    @property
    def phi(self) -> float:
        return math.inf

    def state(self, t: float) -> tuple[float, float, float]:
        s = t - self.t_start
        a, b = self.a, self.b
        return (
            ((a * s / 6.0 + b / 2.0) * s + self.c) * s + self.d,
            (a * s / 2.0 + b) * s + self.c,
            a * s + b,
        )

    def states(self, ts):
        s = np.asarray(ts, dtype=float) - self.t_start
        a, b = self.a, self.b
        return (
            ((a * s / 6.0 + b / 2.0) * s + self.c) * s + self.d,
            (a * s / 2.0 + b) * s + self.c,
            a * s + b,
        )

    def energy(self, t_lo: Optional[float] = None, t_hi: Optional[float] = None) -> float:
        """Integral of u^2/2 over [t_lo, t_hi] (defaults: the whole segment)."""
        s0 = (self.t_start if t_lo is None else t_lo) - self.t_start
        s1 = (self.t_end if t_hi is None else t_hi) - self.t_start
        a, b = self.a, self.b

        def prim(s):
            return a * a * s ** 3 / 6.0 + a * b * s * s / 2.0 + b * b * s / 2.0

        return prim(s1) - prim(s0)

    def absolute(self) -> tuple[float, float, float, float]:
        """Coefficients in absolute time: u(t) = a t + b, ..., x = a t^3/6 + b t^2/2 + c t + d."""
        a, b, c, d = self.a, self.b, self.c, self.d
        t0 = self.t_start
        return (
            a,
            b - a * t0,
            c - b * t0 + a * t0 * t0 / 2.0,
            d - c * t0 + b * t0 * t0 / 2.0 - a * t0 ** 3 / 6.0,
        )

    def clipped(self, t_start: float, t_end: float) -> "PolySegment":
        x, v, u = self.state(t_start)
        return PolySegment(t_start, t_end, self.a, u, v, x)


@dataclass(frozen=True)
class ExpSegment:
    """Arc on which the safety constraint is active.

    Position is ``base(s) + exp(-s/phi) * expo(s)`` with ``s = t - t_start``.
    ``base`` is the particular solution inherited from the leader's motion and
    ``expo`` carries the integration constants (the exponential relaxation of
    the follower's speed toward the leader's). ``leader_kind`` records what the
    leader was doing on this interval: ``"poly"`` (unconstrained cubic),
    ``"hold"`` (constant speed past the merging point) or ``"arc"`` (itself
    constrained).
    """

    t_start: float
    t_end: float
    phi: float
    base: tuple
    expo: tuple
    leader_kind: str = "poly"

    def __post_init__(self):
        object.__setattr__(self, "_cache", self._compute_parts())

    def _parts(self):
        return self._cache

    def _compute_parts(self):
        b = self.base
        db = _der(b)
        ddb = _der(db)
        e = self.expo
        k = 1.0 / self.phi
        de = _der(e) if e else (0.0,)
        dde = _der(de)
        # d/ds [exp(-ks) E] = exp(-ks) (E' - k E)
        ev = _padd(de, tuple(-k * c for c in e))
        eu = _padd(dde, _padd(tuple(-2.0 * k * c for c in de), tuple(k * k * c for c in e)))
        return b, db, ddb, e, ev, eu

    def state(self, t: float) -> tuple[float, float, float]:
        s = t - self.t_start
        b, db, ddb, e, ev, eu = self._parts()
        w = math.exp(-s / self.phi)
        return (
            _horner(b, s) + w * _horner(e, s),
            _horner(db, s) + w * _horner(ev, s),
            _horner(ddb, s) + w * _horner(eu, s),
        )

    def states(self, ts):
        s = np.asarray(ts, dtype=float) - self.t_start
        b, db, ddb, e, ev, eu = self._parts()
        w = np.exp(-s / self.phi)
        return (
            _horner(b, s) + w * _horner(e, s),
            _horner(db, s) + w * _horner(ev, s),
            _horner(ddb, s) + w * _horner(eu, s),
        )

    def control_terms(self) -> tuple[tuple, tuple]:
        """(polynomial part, exp-multiplied part) of u(s)."""
        b, db, ddb, e, ev, eu = self._parts()
        return ddb, eu

    def energy(self, t_lo: Optional[float] = None, t_hi: Optional[float] = None) -> float:
        s0 = (self.t_start if t_lo is None else t_lo) - self.t_start
        s1 = (self.t_end if t_hi is None else t_hi) - self.t_start
        p, q = self.control_terms()
        k = 1.0 / self.phi
        pp = _pmul(p, p)
        pq = _pmul(p, q)
        qq = _pmul(q, q)

        def prim(s):
            return (
                0.5 * _exp_poly_integral(pp, 0.0, s)
                + _exp_poly_integral(pq, k, s)
                + 0.5 * _exp_poly_integral(qq, 2.0 * k, s)
            )

        return prim(s1) - prim(s0)

    def clipped(self, t_start: float, t_end: float) -> "ExpSegment":
        off = t_start - self.t_start
        w = math.exp(-off / self.phi)
        return ExpSegment(
            t_start,
            t_end,
            self.phi,
            _shift(self.base, off),
            tuple(w * c for c in _shift(self.expo, off)),
            self.leader_kind,
        )


def _padd(p: Sequence[float], q: Sequence[float]) -> tuple:
    n = max(len(p), len(q))
    return tuple((p[k] if k < len(p) else 0.0) + (q[k] if k < len(q) else 0.0) for k in range(n))


Segment = Union[PolySegment, ExpSegment]


@dataclass(frozen=True)
class Trajectory:
    """Contiguous piecewise-analytic plan from the CZ entry to the merging point.

    Past ``t_m`` the vehicle may keep its terminal speed until ``hold_until``
    (the constant-speed hold a closely followed vehicle maintains after
    crossing).  Evaluation outside both windows raises :class:`OutOfDomainError`.
    """

    segments: tuple
    hold_until: Optional[float] = None
    _starts: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ValueError("a trajectory needs at least one segment")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "_starts", tuple(s.t_start for s in segs))
        for seg in segs:
            if not seg.t_end > seg.t_start:
                raise ValueError(f"empty segment [{seg.t_start}, {seg.t_end}]")
        for left, right in zip(segs, segs[1:]):
            if abs(left.t_end - right.t_start) > TIME_EPS:
                raise ValueError(f"gap between segments at t={left.t_end} / {right.t_start}")
            xl, vl, ul = left.state(left.t_end)
            xr, vr, ur = right.state(right.t_start)
            if abs(xl - xr) > CONTINUITY_TOL_X:
                raise ValueError(f"position jump {xl - xr:.3e} m at t={right.t_start}")
            if abs(vl - vr) > CONTINUITY_TOL_V:
                raise ValueError(f"speed jump {vl - vr:.3e} m/s at t={right.t_start}")
            if abs(ul - ur) > CONTINUITY_TOL_U:
                raise ValueError(f"control jump {ul - ur:.3e} m/s^2 at t={right.t_start}")
        x0 = segs[0].state(segs[0].t_start)[0]
        if abs(x0) > CONTINUITY_TOL_X:
            raise ValueError(f"trajectory must start at x=0, got {x0}")
        if self.hold_until is not None and self.hold_until < self.t_m - TIME_EPS:
            raise ValueError("hold_until precedes t_m")

    @property
    def t0(self) -> float:
        return self.segments[0].t_start

    @property
    def t_m(self) -> float:
        return self.segments[-1].t_end

    @property
    def terminal_state(self) -> tuple[float, float, float]:
        return self.segments[-1].state(self.t_m)

    @property
    def terminal_speed(self) -> float:
        return self.terminal_state[1]

    @property
    def has_constrained_arc(self) -> bool:
        return any(isinstance(s, ExpSegment) for s in self.segments)

    def with_hold(self, hold_until: Optional[float]) -> "Trajectory":
        return replace(self, hold_until=hold_until)

    def extend_hold(self, t: float) -> "Trajectory":
        cur = self.hold_until if self.hold_until is not None else self.t_m
        return self.with_hold(max(cur, t, self.t_m))

    def hold_segment(self, t_end: Optional[float] = None) -> PolySegment:
        """The constant-speed continuation past the merging point as a segment."""
        end = self.hold_until if t_end is None else t_end
        if end is None or end <= self.t_m:
            raise OutOfDomainError("no hold window past t_m")
        x, v, _ = self.terminal_state
        return PolySegment(self.t_m, end, 0.0, 0.0, v, x)

    def state(self, t: float) -> tuple[float, float, float]:
        if t < self.t0 - TIME_EPS:
            raise OutOfDomainError(f"t={t} precedes CZ entry t0={self.t0}")
        if t <= self.t_m:
            k = bisect.bisect_right(self._starts, t) - 1
            return self.segments[max(k, 0)].state(t)
        if self.hold_until is not None and t <= self.hold_until + TIME_EPS:
            x, v, _ = self.terminal_state
            return x + v * (t - self.t_m), v, 0.0
        raise OutOfDomainError(
            f"t={t} lies past t_m={self.t_m} and outside the hold window "
            f"(hold_until={self.hold_until}); constant-speed hold assumption breached"
        )

    def states(self, ts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ts = np.asarray(ts, dtype=float)
        if ts.size == 0:
            e = np.empty(0)
            return e, e.copy(), e.copy()
        if ts.min() < self.t0 - TIME_EPS:
            raise OutOfDomainError(f"t={ts.min()} precedes CZ entry t0={self.t0}")
        limit = self.t_m if self.hold_until is None else self.hold_until
        if ts.max() > limit + TIME_EPS:
            raise OutOfDomainError(
                f"t={ts.max()} lies outside [t0, {limit}]; constant-speed hold assumption breached"
            )
        x = np.empty_like(ts)
        v = np.empty_like(ts)
        u = np.empty_like(ts)
        idx = np.searchsorted(np.asarray(self._starts), ts, side="right") - 1
        idx = np.clip(idx, 0, len(self.segments) - 1)
        past = ts > self.t_m
        for k, seg in enumerate(self.segments):
            m = (idx == k) & ~past
            if m.any():
                x[m], v[m], u[m] = seg.states(ts[m])
        if past.any():
            xm, vm, _ = self.terminal_state
            x[past] = xm + vm * (ts[past] - self.t_m)
            v[past] = vm
            u[past] = 0.0
        return x, v, u

    def pieces(self, t_from: float, t_to: float) -> list:
        """Segments covering [t_from, t_to], clipped, with the hold appended as a segment."""
        out = []
        for seg in self.segments:
            lo = max(seg.t_start, t_from)
            hi = min(seg.t_end, t_to)
            if hi > lo + TIME_EPS:
                out.append(seg if (lo == seg.t_start and hi == seg.t_end) else seg.clipped(lo, hi))
        if t_to > self.t_m + TIME_EPS:
            if self.hold_until is None or t_to > self.hold_until + TIME_EPS:
                raise OutOfDomainError(
                    f"requested [{t_from}, {t_to}] beyond hold window of a vehicle with t_m={self.t_m}"
                )
            lo = max(self.t_m, t_from)
            out.append(self.hold_segment(t_to).clipped(lo, t_to) if lo > self.t_m else self.hold_segment(t_to))
        return out

    def energy(self) -> float:
        return sum(seg.energy() for seg in self.segments)

    def breakpoints(self) -> list[float]:
        return [s.t_start for s in self.segments] + [self.t_m]


def evaluate(trajectory: Trajectory, t: float) -> tuple[float, float, float]:
    """(x, v, u) of ``trajectory`` at time ``t``."""
    return trajectory.state(t)


@dataclass
class CavRecord:
    """One vehicle: identity, arrival data and (once planned) its trajectory."""

    id: int
    lane: Lane
    t0: float
    v0: float
    fifo_index: int = -1
    trajectory: Optional[Trajectory] = None
    plan_kind: str = ""
    t1: Optional[float] = None
    t2: Optional[float] = None
    j_curve: tuple = field(default=(), repr=False)
