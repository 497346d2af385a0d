"""Headway slack between a follower and its leader, and the closed-form guards.

Slack is ``x_p - x - phi*v - delta``; negative means the speed-dependent
headway is breached.  On intervals where both vehicles are on polynomial
pieces the slack is a cubic, minimised exactly from its quadratic derivative.
Anywhere an exponential arc is involved the slack is scanned on a 1 ms grid
and the minimum is polished with a bounded scalar search.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .model import OutOfDomainError, PolySegment, TIME_EPS, Trajectory

TOL_GAP = 1e-6
TOL_ACTIVE = 1e-4
GRID_DT = 1e-3


@dataclass(frozen=True)
class SafetyReport:
    pair: tuple
    min_gap_slack: float
    t_min: float
    first_violation_time: Optional[float] = None
    active_intervals: tuple = field(default=())

    @property
    def violated(self) -> bool:
        return self.first_violation_time is not None


def gap(traj_follower: Trajectory, traj_leader: Trajectory, t: float, phi: float, delta: float) -> float:
    """Headway slack at ``t`` (positive means safe)."""
    x, v, _ = traj_follower.state(t)
    try:
        xp, _, _ = traj_leader.state(t)
    except OutOfDomainError as exc:
        raise OutOfDomainError(f"leader not evaluable at t={t}: {exc}") from exc
    return xp - x - phi * v - delta


def gaps(traj_follower: Trajectory, traj_leader: Trajectory, ts, phi: float, delta: float) -> np.ndarray:
    x, v, _ = traj_follower.states(ts)
    xp, _, _ = traj_leader.states(ts)
    return xp - x - phi * v - delta


def _slack_cubic(fs: PolySegment, ls: PolySegment, phi, delta):
    """Ascending coefficients in s = t - fs.t_start of the slack on a poly/poly overlap."""
    if ls.t_start != fs.t_start:
        ls = ls.clipped(fs.t_start, fs.t_end)
    xl = np.array(ls.base)
    xf = np.array(fs.base)
    vf = np.array([fs.c, fs.b, fs.a / 2.0, 0.0])
    out = xl - xf - phi * vf
    out[0] -= delta
    return out


def _interval_pairs(tf: Trajectory, tl: Trajectory, t_from, t_to):
    fp = tf.pieces(t_from, t_to)
    lp = tl.pieces(t_from, t_to)
    cuts = sorted({t_from, t_to, *(p.t_start for p in fp), *(p.t_start for p in lp)})
    cuts = [c for c in cuts if t_from <= c <= t_to]
    i = j = 0
    for lo, hi in zip(cuts, cuts[1:]):
        if hi - lo <= TIME_EPS:
            continue
        mid = 0.5 * (lo + hi)
        while i + 1 < len(fp) and fp[i].t_end <= mid:
            i += 1
        while j + 1 < len(lp) and lp[j].t_end <= mid:
            j += 1
        yield lo, hi, fp[i], lp[j]


def check_window(
    traj_follower: Trajectory,
    traj_leader: Trajectory,
    t_from: float,
    t_to: float,
    phi: float,
    delta: float,
    pair: tuple = (None, None),
    tol_gap: float = TOL_GAP,
) -> SafetyReport:
    """Minimum slack over [t_from, t_to] and the first time it drops below ``-tol_gap``."""
    if not t_to > t_from:
        raise ValueError("need t_from < t_to")
    best = (math.inf, t_from)
    first = None
    active = []

    def f(t):
        return gap(traj_follower, traj_leader, t, phi, delta)

    for lo, hi, fs, ls in _interval_pairs(traj_follower, traj_leader, t_from, t_to):
        if isinstance(fs, PolySegment) and isinstance(ls, PolySegment):
            fs_c = fs.clipped(lo, hi) if fs.t_start != lo else fs
            coef = _slack_cubic(fs_c, ls, phi, delta)
            poly = np.polynomial.Polynomial(coef)
            span = hi - lo
            cands = [0.0, span]
            for r in poly.deriv().roots():
                if abs(r.imag) < 1e-12 and 0.0 < r.real < span:
                    cands.append(r.real)
            vals = [poly(s) for s in cands]
            k = int(np.argmin(vals))
            if vals[k] < best[0]:
                best = (float(vals[k]), lo + cands[k])
            if first is None and min(vals) < -tol_gap:
                shifted = poly + tol_gap
                if shifted(0.0) < 0:
                    first = lo
                else:
                    rs = sorted(r.real for r in shifted.roots() if abs(r.imag) < 1e-9 and 0.0 <= r.real <= span)
                    ends = rs[1:] + [span]
                    for r, nxt in zip(rs, ends):
                        if shifted(0.5 * (r + nxt)) < 0:
                            first = lo + r
                            break
            if np.all(np.abs(coef) < TOL_ACTIVE / max(1.0, span ** 3)):
                active.append((lo, hi))
            continue
        n = max(2, int(math.ceil((hi - lo) / GRID_DT)) + 1)
        ts = np.linspace(lo, hi, n)
        x, v, _ = fs.states(ts)
        xp, _, _ = ls.states(ts)
        sl = xp - x - phi * v - delta
        k = int(np.argmin(sl))
        tmin, smin = ts[k], sl[k]
        if 0 < k < n - 1:
            res = minimize_scalar(f, bounds=(ts[k - 1], ts[k + 1]), method="bounded", options={"xatol": 1e-10})
            if res.fun < smin:
                tmin, smin = res.x, res.fun
        if smin < best[0]:
            best = (float(smin), float(tmin))
        if first is None and smin < -tol_gap:
            bad = np.nonzero(sl < -tol_gap)[0]
            if bad.size and bad[0] > 0:
                a, b = ts[bad[0] - 1], ts[bad[0]]
                first = brentq(lambda t: f(t) + tol_gap, a, b, xtol=1e-12)
            else:
                first = lo if bad.size and bad[0] == 0 else tmin
        on = np.abs(sl) <= TOL_ACTIVE
        if on.any():
            idx = np.nonzero(on)[0]
            splits = np.nonzero(np.diff(idx) > 1)[0]
            starts = np.concatenate(([idx[0]], idx[splits + 1]))
            ends = np.concatenate((idx[splits], [idx[-1]]))
            for s0, s1 in zip(starts, ends):
                if s1 > s0:
                    active.append((float(ts[s0]), float(ts[s1])))
    merged = []
    for a, b in sorted(active):
        if merged and a <= merged[-1][1] + 2 * GRID_DT:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    if best[0] >= -tol_gap:
        first = None
    elif first is None:
        first = best[1]
    return SafetyReport(pair, best[0], best[1], first, tuple(merged))


def theorem1_guard(v0_i: float, v0_ip: float, t0_i: float, t0_ip: float, phi: float, delta: float) -> bool:
    """True when the same-lane follower provably never needs a constrained arc."""
    if not v0_i > 0:
        raise ValueError("v0_i must be > 0")
    return v0_i <= v0_ip and t0_i - t0_ip >= phi + delta / v0_i


def theorem4_guard(v0_i: float, v0_im1: float, t0_i: float, t0_im1: float, phi: float, delta: float) -> bool:
    """Same test against the FIFO predecessor in the other lane; permits a plain free-terminal plan."""
    return theorem1_guard(v0_i, v0_im1, t0_i, t0_im1, phi, delta)
