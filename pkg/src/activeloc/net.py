"""Simulated wireless network and the leader's estimation/planning loop.

All handlers run on one scheduler thread.  Events are totally ordered by
``(time, phase, sequence)``; handlers receive messages, never the scheduler,
so a real transport could drive the same :class:`Leader`.
"""

from __future__ import annotations

import enum
import heapq
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence

import numpy as np

from activeloc.errors import ConfigurationError, DomainError, MeasurementRejected
from activeloc.estimator import (
    DriftState,
    ProcessNoise,
    RelativeMeasurement,
    apply_measurement,
    pair_traces,
    propagate,
)
from activeloc.geometry import world_to_body
from activeloc.grid import OccupancyGrid
from activeloc.planner import DroneView, Planner, PlannerConfig, Snapshot
from activeloc.sim import Trajectory, identify

log = logging.getLogger(__name__)

LEADER = 0

# event phases at equal timestamps: sensors first, then deliveries, then the leader
PHASE_WORLD, PHASE_DELIVERY, PHASE_LEADER, PHASE_LOG = 0, 1, 2, 3


class Kind(str, enum.Enum):
    ODOMETRY = "odometry"
    MEASUREMENT = "measurement"
    YAW_COMMAND = "yaw_command"
    DRIFT_CORRECTION = "drift_correction"


@dataclass
class Message:
    kind: Kind
    sender: int
    payload: Any
    send_time: float


@dataclass
class OdometryPayload:
    seq: int  # VIO tick index
    pos: np.ndarray
    yaw: float


@dataclass
class MeasurementPayload:
    observer: int
    z: np.ndarray
    odo: np.ndarray  # observer VIO position at the stamp
    yaw: float
    stamp: int
    truth_id: int = -1  # evaluation bookkeeping, ignored by the leader


@dataclass
class YawCommandPayload:
    observer: int
    target: int
    psi_des: float
    turn_rate: float
    expected_rel: np.ndarray


@dataclass
class LinkModel:
    latency: float | tuple[float, float] = 0.0
    drop_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ConfigurationError("drop_prob must lie in [0, 1]")
        lo, hi = self.bounds
        if lo < 0 or hi < lo:
            raise ConfigurationError(f"invalid latency {self.latency}")

    @property
    def bounds(self) -> tuple[float, float]:
        if isinstance(self.latency, (tuple, list)):
            return float(self.latency[0]), float(self.latency[1])
        return float(self.latency), float(self.latency)


class Scheduler:
    """Discrete-event queue with a total order on ``(time, phase, seq)``."""

    def __init__(self):
        self._q: list = []
        self._seq = 0
        self.now = 0.0

    def at(self, time: float, phase: int, fn: Callable, *args) -> None:
        heapq.heappush(self._q, (time, phase, self._seq, fn, args))
        self._seq += 1

    def run_until(self, t_end: float) -> None:
        while self._q and self._q[0][0] <= t_end + 1e-12:
            time, _, _, fn, args = heapq.heappop(self._q)
            self.now = time
            fn(*args)

    def __len__(self):
        return len(self._q)


@dataclass
class Delivery:
    receiver: int
    time: float
    dropped: bool


class Network:
    """Lossy FIFO links between drones; self-addressed messages are local."""

    def __init__(self, link: LinkModel, scheduler: Scheduler, trace: Optional[list] = None):
        self.link = link
        self.scheduler = scheduler
        self.rng = np.random.default_rng(link.seed)
        self.handlers: dict[int, Callable[[Message], None]] = {}
        self._last: dict[tuple[int, int], float] = defaultdict(lambda: -math.inf)
        self.trace = trace

    def subscribe(self, drone: int, handler: Callable[[Message], None]) -> None:
        self.handlers[drone] = handler

    def publish(self, msg: Message, receivers: Sequence[int]) -> list[Delivery]:
        out = []
        lo, hi = self.link.bounds
        for r in receivers:
            if r == msg.sender:
                t, dropped = msg.send_time, False
            else:
                dropped = bool(self.rng.random() < self.link.drop_prob) if self.link.drop_prob > 0 else False
                lat = lo if hi == lo else float(self.rng.uniform(lo, hi))
                t = max(msg.send_time + lat, self._last[(msg.sender, r)])
                if not dropped:
                    self._last[(msg.sender, r)] = t
            out.append(Delivery(r, t, dropped))
            if self.trace is not None:
                self.trace.append((msg.send_time, t, msg.kind.value, msg.sender, r, int(dropped)))
            if not dropped:
                self.scheduler.at(t, PHASE_DELIVERY, self._deliver, r, msg)
        return out

    def _deliver(self, receiver: int, msg: Message) -> None:
        handler = self.handlers.get(receiver)
        if handler is not None:
            handler(msg)


@dataclass
class LeaderConfig:
    n: int
    sigma_v: float
    sigma_d: float
    planner: PlannerConfig
    planning_enabled: bool = True
    max_age: int = 10
    joseph: bool = False
    gate: float = 1.0
    dwell: float = 0.5
    busy_slack: float = 0.2
    history: int = 64


@dataclass
class LeaderLogs:
    updates: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    pair_traces: list = field(default_factory=list)
    tasks: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)


class Leader:
    """Runs the swarm Kalman filter and the yaw planner (drone 0)."""

    def __init__(self, cfg: LeaderConfig, trajectories: Sequence[Trajectory],
                 grid: Optional[OccupancyGrid] = None, known_region=None):
        self.cfg = cfg
        self.n = cfg.n
        self.state = DriftState.zeros(cfg.n)
        self.planner = Planner(cfg.planner)
        self.trajectories = list(trajectories)
        self.grid = grid
        self.known_region = known_region
        self.N = cfg.sigma_d**2 * np.eye(3)
        self.odo: list[dict[int, tuple[np.ndarray, float]]] = [dict() for _ in range(cfg.n)]
        self.latest_seq = [-1] * cfg.n
        self.propagated_seq = [0] * cfg.n
        self.pending: list[MeasurementPayload] = []
        self.busy_until = [-math.inf] * cfg.n
        self.logs = LeaderLogs()

    # helpers ----------------------------------------------------------
    def latest_odometry(self) -> np.ndarray:
        out = np.full((self.n, 3), np.nan)
        for k in range(self.n):
            if self.latest_seq[k] >= 0:
                out[k] = self.odo[k][self.latest_seq[k]][0]
        return out

    def corrected_positions(self) -> np.ndarray:
        return self.latest_odometry() + self.state.drifts()

    def _odo_at(self, k: int, seq: int):
        return self.odo[k].get(seq)

    def _ingest_odometry(self, sender: int, p: OdometryPayload) -> None:
        self.odo[sender][p.seq] = (np.asarray(p.pos, float), float(p.yaw))
        if p.seq > self.latest_seq[sender]:
            self.latest_seq[sender] = p.seq
        horizon = self.latest_seq[sender] - self.cfg.history
        for s in [s for s in self.odo[sender] if s < horizon]:
            del self.odo[sender][s]

    def _process_measurement(self, m: MeasurementPayload, now: float) -> str:
        """Returns ``applied``, ``wait`` or a drop reason."""
        epoch = self.state.epoch
        if epoch - m.stamp > self.cfg.max_age:
            return "stale"
        i = m.observer
        cand = np.full((self.n, 3), np.nan)
        for k in range(self.n):
            rec = self._odo_at(k, m.stamp)
            if rec is None and self.latest_seq[k] >= 0:
                rec = self.odo[k][self.latest_seq[k]]
            if rec is not None:
                cand[k] = rec[0]
        cand[i] = m.odo
        j = identify(m.z, i, m.odo, m.yaw, cand, self.state.drifts(), self.cfg.gate)
        if j is None:
            return "unidentified"
        rec_j = self._odo_at(j, m.stamp)
        if rec_j is None:
            return "wait"
        meas = RelativeMeasurement(i, j, m.z, world_to_body(m.yaw), self.N, m.stamp)
        try:
            new, res = apply_measurement(self.state, meas, m.odo, rec_j[0],
                                         max_age=self.cfg.max_age, joseph=self.cfg.joseph)
        except (MeasurementRejected, DomainError) as exc:
            self.logs.diagnostics.append((now, "rejected", i, j, str(exc)))
            return "rejected"
        self.state = new
        self.logs.updates.append((now, epoch, m.stamp, i, j, m.truth_id, *res.r.tolist(),
                                  res.tr_before, res.tr_after))
        return "applied"

    def _views(self, now: float) -> list[DroneView]:
        pos = self.corrected_positions()
        out = []
        for k in range(self.n):
            seq = self.latest_seq[k]
            yaw = self.odo[k][seq][1] if seq >= 0 else 0.0
            tr = self.trajectories[k]
            out.append(DroneView(pos[k], yaw, tr.exit_time(now, self.known_region), tr.speed_at))
        return out

    # main loop --------------------------------------------------------
    def cycle(self, inbox: Sequence[Message], now: float, plan: bool) -> list[tuple[Message, list[int]]]:
        """One leader step: propagate, fuse measurements, maybe plan.

        Returns outbound ``(message, receivers)`` pairs.
        """
        for msg in sorted(inbox, key=lambda m: m.send_time):
            if not 0 <= msg.sender < self.n:
                self.logs.diagnostics.append((now, "unknown_sender", msg.sender, -1, msg.kind.value))
                log.warning("discarding message from unknown sender %s", msg.sender)
                continue
            if msg.kind is Kind.ODOMETRY:
                self._ingest_odometry(msg.sender, msg.payload)
            elif msg.kind is Kind.MEASUREMENT:
                self.pending.append(msg.payload)

        ticks = np.zeros(self.n)
        for k in range(self.n):
            if self.latest_seq[k] > self.propagated_seq[k]:
                ticks[k] = self.latest_seq[k] - self.propagated_seq[k]
                self.propagated_seq[k] = self.latest_seq[k]
        prop = propagate(self.state, ProcessNoise.isotropic(self.n, self.cfg.sigma_v, ticks))
        # epoch is the VIO tick index, not the number of leader cycles
        self.state = replace(prop, epoch=max(self.state.epoch, max(self.latest_seq)))

        applied = 0
        still = []
        for m in self.pending:
            verdict = self._process_measurement(m, now)
            if verdict == "applied":
                applied += 1
            elif verdict == "wait":
                still.append(m)
            else:
                self.logs.diagnostics.append((now, verdict, m.observer, m.truth_id, ""))
        self.pending = still

        out: list[tuple[Message, list[int]]] = []
        if applied:
            out.append((Message(Kind.DRIFT_CORRECTION, LEADER, self.state.drifts().copy(), now),
                        list(range(self.n))))
        if plan:
            out.extend(self._plan(now))
        return out

    def _plan(self, now: float) -> list[tuple[Message, list[int]]]:
        views = self._views(now)
        pos = np.array([v.pos for v in views])
        traces = pair_traces(self.state)
        iu, ju = np.triu_indices(self.n, 1)
        with np.errstate(invalid="ignore"):
            near = np.linalg.norm(pos[iu] - pos[ju], axis=1) <= self.cfg.planner.max_range
        for i, j in zip(iu[near].tolist(), ju[near].tolist()):
            if self.grid is None or not self.grid.segment_blocked(pos[i], pos[j]):
                self.logs.pair_traces.append((now, i, j, float(traces[i, j])))
        if not self.cfg.planning_enabled or not np.all(np.isfinite(pos)):
            return []
        busy = frozenset(k for k in range(self.n) if self.busy_until[k] > now)
        task, decisions = self.planner.plan(self.state, Snapshot(now, views, self.grid, busy))
        self.logs.decisions.extend(d.row() for d in decisions)
        if task is None:
            return []
        self.busy_until[task.observer] = now + task.t_turn + self.cfg.dwell + self.cfg.busy_slack
        self.logs.tasks.append((now, task.observer, task.target, task.psi_cur, task.psi_des, task.t_turn, task.trace))
        cmd = YawCommandPayload(task.observer, task.target, task.psi_des, self.cfg.planner.turn_rate,
                                task.expected_rel)
        return [(Message(Kind.YAW_COMMAND, LEADER, cmd, now), [task.observer])]
