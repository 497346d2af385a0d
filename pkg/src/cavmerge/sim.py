"""Event-driven closed-loop run of the merging coordinator.

Vehicles arrive on two lanes as independent Poisson streams, are appended to
the FIFO queue, and are planned once on arrival against predecessors that are
already planned.  Crossings of the merging point shift FIFO indices; the
vehicle that has just crossed keeps index 0 until the next crossing drops it.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .constrained import algorithm1, algorithm2
from .model import (
    CavMergeError,
    CavRecord,
    InfeasibleError,
    Lane,
    ScenarioParams,
    SolverError,
    Trajectory,
)
from .safety import TOL_GAP, SafetyReport, check_window, theorem1_guard, theorem4_guard
from .unconstrained import solve_case_a, solve_case_b

log = logging.getLogger(__name__)

MONITOR_DT = 0.01
V0_MARGIN = 2.0
MAX_RESAMPLES = 20


class SimulationError(CavMergeError):
    """Planner failure inside a run; ``snapshot`` holds what is needed to replay it."""

    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot


# --- predecessor relations ------------------------------------------------------


@dataclass(frozen=True)
class NoPredecessor:
    pass


@dataclass(frozen=True)
class SameLane:
    ip: CavRecord


@dataclass(frozen=True)
class CrossLane:
    ip: Optional[CavRecord]
    im1: CavRecord


Relation = Union[NoPredecessor, SameLane, CrossLane]


def resolve_predecessors(fifo: list, new_cav: CavRecord) -> Relation:
    """Classify the new vehicle against the queue (which may already hold it at the end)."""
    queue = [c for c in fifo if c is not new_cav]
    if not queue:
        return NoPredecessor()
    im1 = queue[-1]
    if im1.lane == new_cav.lane:
        return SameLane(im1)
    ip = next((c for c in reversed(queue) if c.lane == new_cav.lane), None)
    return CrossLane(ip, im1)


# --- arrivals -----------------------------------------------------------------


def _lane_streams(seed: int):
    ss = np.random.SeedSequence(seed)
    main, merging, resample = ss.spawn(3)
    return np.random.default_rng(main), np.random.default_rng(merging), np.random.default_rng(resample)


def generate_arrivals(
    rate_per_lane: float,
    horizon: float,
    seed: int,
    v0_range: tuple = (12.0, 28.0),
) -> list:
    """Two independent Poisson arrival streams on [0, horizon), merged by arrival time."""
    if rate_per_lane < 0 or horizon <= 0:
        raise ValueError("need rate_per_lane >= 0 and horizon > 0")
    if rate_per_lane == 0:
        return []
    lam = rate_per_lane / 3600.0
    rng_main, rng_merge, _ = _lane_streams(seed)
    raw = []
    for lane, rng in ((Lane.MAIN, rng_main), (Lane.MERGING, rng_merge)):
        t = 0.0
        while True:
            t += rng.exponential(1.0 / lam)
            if t >= horizon:
                break
            raw.append((t, 0 if lane is Lane.MAIN else 1, lane, float(rng.uniform(*v0_range))))
    raw.sort(key=lambda r: (r[0], r[1]))
    return [CavRecord(id=k, lane=lane, t0=t, v0=v) for k, (t, _, lane, v) in enumerate(raw)]


# --- planning -----------------------------------------------------------------


def _hold(rec: Optional[CavRecord]):
    return None if rec is None else rec.trajectory.with_hold(math.inf)


def _violates(traj: Trajectory, leader: Trajectory, params: ScenarioParams) -> bool:
    return check_window(traj, leader, traj.t0, traj.t_m, params.phi, params.delta).violated


def plan_cav(cav: CavRecord, relation: Relation, params: ScenarioParams) -> Trajectory:
    """Dispatch to the right solver and store plan metadata on ``cav``.

    Guards skip constrained solving when they provably can; otherwise the
    unconstrained plan is checked and replaced by a constrained one on
    violation.
    """
    p = params
    cav.t1 = cav.t2 = None
    cav.j_curve = ()
    if isinstance(relation, NoPredecessor):
        traj = solve_case_a(cav.t0, cav.v0, p.L, p.beta).trajectory()
        cav.plan_kind = "caseA"
        return traj
    if isinstance(relation, SameLane):
        ip = relation.ip
        base = solve_case_a(cav.t0, cav.v0, p.L, p.beta).trajectory()
        cav.plan_kind = "caseA"
        # the guard's premise is that both vehicles run the free-terminal law
        if _is_case_a(ip) and theorem1_guard(cav.v0, ip.v0, cav.t0, ip.t0, p.phi, p.delta):
            cav.plan_kind = "caseA-guard"
            return base
        leader = _hold(ip)
        if not _violates(base, leader, p):
            return base
        plan = algorithm1(cav.t0, cav.v0, ip.trajectory, p)
        return _adopt(cav, plan, "alg1")

    ip, im1 = relation.ip, relation.im1
    if _is_case_a(im1) and theorem4_guard(cav.v0, im1.v0, cav.t0, im1.t0, p.phi, p.delta):
        base = solve_case_a(cav.t0, cav.v0, p.L, p.beta).trajectory()
        kind = "caseA-guard"
    else:
        free = solve_case_a(cav.t0, cav.v0, p.L, p.beta).trajectory()
        kind = "caseA-check"
        base = free if _merging_slack(free, im1, p) >= 0.0 else None
    if base is None:
        try:
            base = solve_case_b(
                cav.t0, cav.v0, p.L, p.beta, p.phi, p.delta, im1.trajectory.terminal_speed, im1.trajectory.t_m
            ).trajectory()
            kind = "caseB"
        except SolverError:
            base = solve_case_a(cav.t0, cav.v0, p.L, p.beta).trajectory()
            kind = "caseA-fallback"
    cav.plan_kind = kind
    if ip is None or not _violates(base, _hold(ip), p):
        return base
    if kind == "caseB":
        plan = algorithm2(cav.t0, cav.v0, ip.trajectory, im1.trajectory, p)
        return _adopt(cav, plan, "alg2")
    plan = algorithm1(cav.t0, cav.v0, ip.trajectory, p)
    traj = plan.trajectory()
    if _merging_slack(traj, im1, p) < -TOL_GAP:
        plan = algorithm2(cav.t0, cav.v0, ip.trajectory, im1.trajectory, p)
        return _adopt(cav, plan, "alg2")
    return _adopt(cav, plan, "alg1")


def _is_case_a(rec: CavRecord) -> bool:
    return rec.plan_kind.startswith("caseA")


def _merging_slack(traj: Trajectory, im1: CavRecord, params: ScenarioParams) -> float:
    x_prev = im1.trajectory.with_hold(math.inf).state(traj.t_m)[0]
    return x_prev - params.L - params.phi * traj.terminal_speed - params.delta


def _adopt(cav, plan, tag):
    cav.plan_kind = tag if plan.kind == "arc" else tag + "-terminal"
    cav.t1, cav.t2 = plan.t1, plan.t2
    cav.j_curve = plan.j_curve
    return plan.trajectory()


# --- run ------------------------------------------------------------------------


@dataclass
class MergeReport:
    pair: tuple
    t: float
    slack: float


@dataclass
class BoundViolation:
    cav_id: int
    quantity: str
    t: float
    value: float


@dataclass
class SimState:
    clock: float = 0.0
    fifo: list = field(default_factory=list)
    completed: list = field(default_factory=list)
    safety: list = field(default_factory=list)
    merging: list = field(default_factory=list)
    bounds: list = field(default_factory=list)


@dataclass
class SimResult:
    params: ScenarioParams
    horizon: float
    records: list
    safety: list
    merging: list
    bounds: list
    rejected: int
    resampled: int
    fifo_inversions: int
    plan_counts: dict

    def digest(self) -> str:
        h = hashlib.sha256()
        for r in self.records:
            tr = r.trajectory
            h.update(f"{r.id},{r.lane.value},{r.t0!r},{r.v0!r},{tr.t_m!r},{r.plan_kind}".encode())
            for s in tr.segments:
                h.update(repr(s).encode())
        return h.hexdigest()

    @property
    def min_safety_slack(self) -> float:
        return min((r.min_gap_slack for r in self.safety), default=math.inf)

    @property
    def min_merging_slack(self) -> float:
        return min((r.slack for r in self.merging), default=math.inf)


def _initial_slack_ok(ip: Optional[CavRecord], t0: float, v0: float, params: ScenarioParams) -> bool:
    if ip is None:
        return True
    xp = ip.trajectory.with_hold(math.inf).state(t0)[0]
    if xp >= params.L:
        return True
    return xp - params.phi * v0 - params.delta > 0.0


def _monitor_bounds(rec: CavRecord, params: ScenarioParams, out: list):
    tr = rec.trajectory
    n = max(2, int(math.ceil((tr.t_m - tr.t0) / MONITOR_DT)) + 1)
    ts = np.linspace(tr.t0, tr.t_m, n)
    _, v, u = tr.states(ts)
    tol = 1e-9
    for name, arr, lo, hi in (("v", v, params.v_min, params.v_max), ("u", u, params.u_min, params.u_max)):
        bad = np.nonzero((arr < lo - tol) | (arr > hi + tol))[0]
        if bad.size:
            k = bad[np.argmax(np.maximum(lo - arr[bad], arr[bad] - hi))]
            out.append(BoundViolation(rec.id, name, float(ts[k]), float(arr[k])))


def run(
    params: ScenarioParams,
    horizon: float,
    v0_range: Optional[tuple] = None,
    arrivals: Optional[list] = None,
    observer: Optional[Callable] = None,
) -> SimResult:
    """Plan every arrival in [0, horizon) and monitor the resulting traffic.

    ``observer(clock, fifo)`` is called after every arrival event with the
    current queue (index 0 is the vehicle that crossed most recently).
    """
    p = params
    if v0_range is None:
        v0_range = (p.v_min + V0_MARGIN, p.v_max - V0_MARGIN)
    if arrivals is None:
        arrivals = generate_arrivals(p.arrival_rate_per_lane, horizon, p.rng_seed, v0_range)
    _, _, rng_resample = _lane_streams(p.rng_seed)
    st = SimState()
    records = []
    rejected = resampled = 0

    for cav in arrivals:
        st.clock = cav.t0
        # merging-point crossings since the previous arrival
        crossed = [c for c in st.fifo if c.trajectory.t_m <= st.clock]
        if crossed:
            keep = [c for c in st.fifo if c.trajectory.t_m > st.clock]
            last = max(crossed, key=lambda c: c.trajectory.t_m)
            st.completed.extend(c for c in crossed)
            st.fifo = [last] + keep
        for k, c in enumerate(st.fifo):
            c.fifo_index = k if st.completed else k + 1

        relation = resolve_predecessors(st.fifo, cav)
        ip = relation.ip if isinstance(relation, (SameLane, CrossLane)) else None
        traj = None
        v0 = cav.v0
        # no admissible entry speed can clear the headway; skip without resampling
        hopeless = not _initial_slack_ok(ip, cav.t0, v0_range[0], p)
        for attempt in range(0 if hopeless else MAX_RESAMPLES + 1):
            if attempt:
                v0 = float(rng_resample.uniform(*v0_range))
                resampled += 1
            if not _initial_slack_ok(ip, cav.t0, v0, p):
                continue
            cav.v0 = v0
            try:
                traj = plan_cav(cav, relation, p)
                break
            except InfeasibleError as exc:
                log.debug("cav %d: infeasible at v0=%.3f (%s)", cav.id, v0, exc)
                continue
            except CavMergeError as exc:
                snapshot = dict(
                    params=p, cav=cav, relation=relation, fifo=[(c.id, c.lane.value, c.t0, c.v0) for c in st.fifo]
                )
                raise SimulationError(f"planner failed for cav {cav.id}: {exc}", snapshot) from exc
        if traj is None:
            rejected += 1
            continue

        cav.trajectory = traj
        if isinstance(relation, (SameLane, CrossLane)):
            for pred in {id(r): r for r in (ip, getattr(relation, "im1", None)) if r is not None}.values():
                pred.trajectory = pred.trajectory.extend_hold(traj.t_m)
        st.fifo.append(cav)
        cav.fifo_index = len(st.fifo) - (1 if st.completed else 0)
        records.append(cav)

        # monitors
        if ip is not None:
            rep = check_window(traj, ip.trajectory, traj.t0, traj.t_m, p.phi, p.delta, pair=(cav.id, ip.id))
            st.safety.append(rep)
        if isinstance(relation, CrossLane):
            im1 = relation.im1
            x_prev = im1.trajectory.state(traj.t_m)[0]
            slack = x_prev - p.L - p.phi * traj.terminal_speed - p.delta
            st.merging.append(MergeReport((cav.id, im1.id), traj.t_m, float(slack)))
        _monitor_bounds(cav, p, st.bounds)
        if observer is not None:
            observer(st.clock, list(st.fifo))

    inversions = sum(1 for a, b in zip(records, records[1:]) if b.trajectory.t_m < a.trajectory.t_m - 1e-9)
    counts = {}
    for r in records:
        counts[r.plan_kind] = counts.get(r.plan_kind, 0) + 1
    return SimResult(p, horizon, records, st.safety, st.merging, st.bounds, rejected, resampled, inversions, counts)
