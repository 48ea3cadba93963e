"""Scenario execution: world + network + leader on one discrete-event clock."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from activeloc.config import ScenarioConfig
from activeloc.geometry import yaw_to_world
from activeloc.grid import OccupancyGrid
from activeloc.metrics import EvalSample
from activeloc.net import (
    LEADER,
    PHASE_LEADER,
    PHASE_LOG,
    PHASE_WORLD,
    Kind,
    Leader,
    LeaderConfig,
    LinkModel,
    MeasurementPayload,
    Message,
    Network,
    OdometryPayload,
    Scheduler,
    YawCommandPayload,
)
from activeloc.estimator import state_rows
from activeloc.planner import PlannerConfig
from activeloc.sim import CameraModel, Trajectory, World, YawMode


def formation_waypoints(cfg: ScenarioConfig) -> list[tuple[list, float]]:
    if cfg.drones is not None:
        return [(d.waypoints, d.speed) for d in cfg.drones]
    f = cfg.formation
    out = []
    for k in range(cfg.n_drones):
        if f.kind == "line":
            row, col = 0, k
        else:
            row, col = divmod(k, f.columns)
        x0 = -row * f.spacing
        y = col * f.spacing
        out.append(([(x0, y, f.altitude), (x0 + f.length, y, f.altitude)], f.speed))
    return out


def build_grid(cfg: ScenarioConfig) -> Optional[OccupancyGrid]:
    g = cfg.grid
    if g is None:
        return None
    return OccupancyGrid.from_rectangles(g.origin, g.resolution, g.size, g.obstacles, g.outside_occupied)


def known_region(cfg: ScenarioConfig, grid: Optional[OccupancyGrid]):
    if cfg.known_region is not None:
        return tuple(cfg.known_region)
    return grid.bounds if grid is not None else None


def planner_config(cfg: ScenarioConfig) -> PlannerConfig:
    p = cfg.planner
    return PlannerConfig(p.trace_threshold, p.confidence, p.fov_half_angle, p.max_range,
                         p.turn_rate, p.a_max, p.min_retrigger_interval, p.max_pairs_per_cycle)


@dataclass
class RunResult:
    config: ScenarioConfig
    samples: list = field(default_factory=list)  # EvalSample
    truth_rows: list = field(default_factory=list)
    estimator_rows: list = field(default_factory=list)
    messages: list = field(default_factory=list)
    updates: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    pair_traces: list = field(default_factory=list)
    tasks: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    yaw_commands: list = field(default_factory=list)  # as received by drones
    acquisitions: list = field(default_factory=list)


class DroneAgent:
    """Follower-side behavior: execute yaw commands, apply drift corrections."""

    def __init__(self, idx: int, world: World, gate: float, result: RunResult):
        self.idx = idx
        self.world = world
        self.gate = gate
        self.drift = np.zeros(3)
        self.task: Optional[YawCommandPayload] = None
        self.result = result

    def handle(self, msg: Message) -> None:
        if msg.kind is Kind.YAW_COMMAND:
            cmd: YawCommandPayload = msg.payload
            self.task = cmd  # newest command preempts
            self.world.command_turn(self.idx, cmd.psi_des, cmd.turn_rate)
            self.result.yaw_commands.append((self.world.time, self.idx, cmd.target, cmd.psi_des))
        elif msg.kind is Kind.DRIFT_CORRECTION:
            self.drift = np.asarray(msg.payload)[self.idx].copy()

    def check_acquired(self, detections) -> None:
        d = self.world.drones[self.idx]
        if self.task is None or d.yaw_mode is not YawMode.TURNING:
            return
        Rg = yaw_to_world(d.yaw)
        for det in detections:
            if np.linalg.norm(Rg @ det.z - self.task.expected_rel) <= self.gate:
                self.world.stop_turn(self.idx)
                self.result.acquisitions.append((self.world.time, self.idx, self.task.target))
                return

    def corrected(self) -> np.ndarray:
        pos, _ = self.world.vio_output(self.idx)
        return pos + self.drift


def run(cfg: ScenarioConfig, trace_messages: bool = True) -> RunResult:
    n = cfg.n_drones
    result = RunResult(cfg)
    grid = build_grid(cfg)
    trajs = [Trajectory(w, s) for w, s in formation_waypoints(cfg)]
    camera = CameraModel(cfg.camera.h_fov_half, cfg.camera.v_fov_half, cfg.camera.max_range, cfg.sigma_d)
    world_seed, link_seed = np.random.SeedSequence(cfg.seed).generate_state(2)
    world = World(trajs, cfg.sigma_v, cfg.rates.vio, camera, int(world_seed), grid, cfg.sim.dwell)
    sched = Scheduler()
    latency = cfg.link.latency if isinstance(cfg.link.latency, (int, float)) else tuple(cfg.link.latency)
    net = Network(LinkModel(latency, cfg.link.drop_prob, int(link_seed)), sched,
                  result.messages if trace_messages else None)

    leader = Leader(
        LeaderConfig(n, cfg.sigma_v, cfg.sigma_d, planner_config(cfg), cfg.planner.enabled,
                     cfg.estimator.max_age, cfg.estimator.joseph, cfg.sim.gate, cfg.sim.dwell),
        trajs, grid, known_region(cfg, grid),
    )
    inbox: list[Message] = []
    agents = [DroneAgent(k, world, cfg.sim.gate, result) for k in range(n)]

    def make_handler(k):
        def handler(msg: Message):
            if k == LEADER and msg.kind in (Kind.ODOMETRY, Kind.MEASUREMENT):
                inbox.append(msg)
            else:
                agents[k].handle(msg)
        return handler

    for k in range(n):
        net.subscribe(k, make_handler(k))

    dt = cfg.dt
    n_steps = int(round(cfg.duration / dt))
    vio_every, det_every = cfg.steps_per("vio"), cfg.steps_per("detector")
    plan_every, log_every = cfg.steps_per("planner"), cfg.steps_per("log")

    def leader_cycle(plan: bool):
        msgs = list(inbox)
        inbox.clear()
        for msg, receivers in leader.cycle(msgs, sched.now, plan):
            net.publish(msg, receivers)

    def record():
        t = sched.now
        truth = world.true_positions()
        raw = np.array([world.vio_output(k)[0] for k in range(n)])
        corr = np.array([a.corrected() for a in agents])
        result.samples.append(EvalSample(t, truth, raw, corr))
        for k, d in enumerate(world.drones):
            result.truth_rows.append((t, k, *d.pos.tolist(), d.yaw, *world.vio[k].drift.tolist()))
        result.estimator_rows.extend(state_rows(leader.state, t))

    def world_step(k: int):
        world.step(dt)
        now = sched.now
        if k % vio_every == 0:
            seq = world._ticks_done
            for i in range(n):
                pos, yaw = world.vio_output(i)
                net.publish(Message(Kind.ODOMETRY, i, OdometryPayload(seq, pos, yaw), now), [LEADER])
            if k % det_every == 0:
                for i in range(n):
                    dets = world.detect(i)
                    agents[i].check_acquired(dets)
                    pos, yaw = world.vio_output(i)
                    for det in dets:
                        pay = MeasurementPayload(i, det.z, pos, yaw, seq, det.truth_id)
                        net.publish(Message(Kind.MEASUREMENT, i, pay, now), [LEADER])
            sched.at(now, PHASE_LEADER, leader_cycle, k % plan_every == 0)
        if k % log_every == 0:
            sched.at(now, PHASE_LOG, record)

    sched.at(0.0, PHASE_LOG, record)
    for k in range(1, n_steps + 1):
        sched.at(k * dt, PHASE_WORLD, world_step, k)
    sched.run_until(n_steps * dt)

    result.updates = leader.logs.updates
    result.decisions = leader.logs.decisions
    result.pair_traces = leader.logs.pair_traces
    result.tasks = leader.logs.tasks
    result.diagnostics = leader.logs.diagnostics
    result.leader = leader
    return result
