"""Constant-time-headway car-following baseline (not Vissim).

A deliberately simple reference used only to exercise the comparison harness.
Each vehicle follows its FIFO predecessor as a virtual leader (both lanes are
measured as distance travelled toward the merging point), accelerating toward
a desired speed when the gap allows:

    u = clip(min(k_v (v_des - v), k_g (gap - h v - s0) + k_d (v_lead - v)), u_min, u_max)

integrated with explicit Euler at ``dt``.  It is not a model of human drivers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CavRecord, ScenarioParams


@dataclass(frozen=True)
class BaselineParams:
    headway: float = 1.8
    standstill: float = 5.0
    k_v: float = 0.4
    k_g: float = 0.23
    k_d: float = 0.7
    dt: float = 0.1


@dataclass
class BaselineVehicle:
    id: int
    lane: object
    t0: float
    ts: np.ndarray
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray

    @property
    def travel_time(self) -> float:
        return float(self.ts[-1] - self.t0)

    @property
    def energy(self) -> float:
        return float(np.trapezoid(0.5 * self.u * self.u, self.ts))


def run_baseline(arrivals: list, params: ScenarioParams, bp: BaselineParams = BaselineParams()) -> list:
    """Simulate every arrival in FIFO order; returns one sampled record per vehicle."""
    out = []
    prev = None
    for cav in sorted(arrivals, key=lambda c: (c.t0, c.id)):
        out.append(_follow(cav, prev, params, bp))
        prev = out[-1]
    return out


def _lead_state(prev: BaselineVehicle, t: float):
    if prev is None or t < prev.ts[0]:
        return None
    if t <= prev.ts[-1]:
        return float(np.interp(t, prev.ts, prev.x)), float(np.interp(t, prev.ts, prev.v))
    # past the merging point the leader keeps its exit speed
    return float(prev.x[-1] + prev.v[-1] * (t - prev.ts[-1])), float(prev.v[-1])


def _follow(cav: CavRecord, prev, p: ScenarioParams, bp: BaselineParams) -> BaselineVehicle:
    t, x, v = cav.t0, 0.0, cav.v0
    ts, xs, vs, us = [t], [x], [v], []
    v_des = p.v_max
    while x < p.L:
        u = bp.k_v * (v_des - v)
        lead = _lead_state(prev, t)
        if lead is not None:
            gap = lead[0] - x
            u = min(u, bp.k_g * (gap - bp.headway * v - bp.standstill) + bp.k_d * (lead[1] - v))
        u = min(max(u, p.u_min), p.u_max)
        if v + u * bp.dt < 0.0:
            u = -v / bp.dt
        us.append(u)
        x += v * bp.dt + 0.5 * u * bp.dt * bp.dt
        v += u * bp.dt
        t += bp.dt
        ts.append(t)
        xs.append(x)
        vs.append(v)
        if t - cav.t0 > 3600.0:
            break
    us.append(us[-1] if us else 0.0)
    return BaselineVehicle(cav.id, cav.lane, cav.t0, np.array(ts), np.array(xs), np.array(vs), np.array(us))
