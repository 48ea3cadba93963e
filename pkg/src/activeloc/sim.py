"""Ground-truth world: scripted trajectories, yaw kinematics, VIO drift, detection."""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from activeloc.errors import ConfigurationError
from activeloc.geometry import wrap_angle, world_to_body, yaw_to_world
from activeloc.grid import OccupancyGrid


class YawMode(enum.Enum):
    CRUISE = "cruise"  # yaw follows the velocity direction
    TURNING = "turning"  # rotating toward a commanded yaw at the turn rate
    HOLDING = "holding"  # dwelling at the commanded yaw
    RETURNING = "returning"  # rotating back to the cruise heading


class Trajectory:
    """Constant-speed polyline through waypoints; hovers at the last one."""

    def __init__(self, waypoints, speed: float, start_time: float = 0.0):
        self.waypoints = np.asarray(waypoints, dtype=float).reshape(-1, 3)
        if len(self.waypoints) == 0:
            raise ConfigurationError("trajectory needs at least one waypoint")
        if len(self.waypoints) > 1 and not speed > 0:
            raise ConfigurationError("trajectory speed must be > 0")
        self.speed = float(speed)
        seg = np.diff(self.waypoints, axis=0)
        self._len = np.linalg.norm(seg, axis=1)
        self._dirs = np.divide(seg, self._len[:, None], out=np.zeros_like(seg), where=self._len[:, None] > 0)
        dur = self._len / self.speed if len(seg) else np.zeros(0)
        self._t = start_time + np.concatenate([[0.0], np.cumsum(dur)])
        self.start_time = start_time

    @property
    def end_time(self) -> float:
        return float(self._t[-1])

    def _segment(self, t: float) -> int:
        k = bisect.bisect_right(self._t, t) - 1
        return min(max(k, 0), len(self._len))

    def position(self, t: float) -> np.ndarray:
        if t <= self._t[0] or len(self._len) == 0:
            return self.waypoints[0].copy()
        k = self._segment(t)
        if k >= len(self._len):
            return self.waypoints[-1].copy()
        return self.waypoints[k] + self._dirs[k] * self.speed * (t - self._t[k])

    def velocity(self, t: float) -> np.ndarray:
        if t < self._t[0] or len(self._len) == 0:
            return np.zeros(3)
        k = self._segment(t)
        if k >= len(self._len):
            return np.zeros(3)
        return self._dirs[k] * self.speed

    def speed_at(self, t: float) -> float:
        return float(np.linalg.norm(self.velocity(t)))

    def exit_time(self, t: float, region) -> float:
        """First time ``>= t`` at which the xy path leaves ``region``; inf if never.

        ``region`` is ``(xmin, ymin, xmax, ymax)``; a path already outside
        returns ``t``.
        """
        if region is None:
            return math.inf
        x0, y0, x1, y1 = region

        def inside(p):
            return x0 <= p[0] <= x1 and y0 <= p[1] <= y1

        if not inside(self.position(t)):
            return t
        k = self._segment(t)
        while k < len(self._len):
            ta, tb = max(self._t[k], t), self._t[k + 1]
            pa = self.position(ta)
            v = self._dirs[k][:2] * self.speed
            t_leave = tb
            for a, lo, hi in ((0, x0, x1), (1, y0, y1)):
                if v[a] > 0:
                    t_leave = min(t_leave, ta + (hi - pa[a]) / v[a])
                elif v[a] < 0:
                    t_leave = min(t_leave, ta + (lo - pa[a]) / v[a])
            if t_leave < tb:
                return t_leave
            k += 1
        return math.inf


@dataclass
class VioModel:
    """Random-walk drift: ``drift += N(0, sigma_v^2 I3)`` once per VIO tick."""

    sigma_v: float
    tick_rate: float
    rng: np.random.Generator
    drift: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ticks: int = 0

    def tick(self) -> None:
        self.ticks += 1
        if self.sigma_v > 0:
            self.drift = self.drift + self.rng.normal(0.0, self.sigma_v, 3)


@dataclass(frozen=True)
class CameraModel:
    h_fov_half: float = math.radians(43.5)
    v_fov_half: float = math.radians(29.0)
    max_range: float = 3.0
    sigma_d: float = 0.02

    def __post_init__(self):
        if not (self.h_fov_half > 0 and self.v_fov_half > 0 and self.max_range > 0):
            raise ConfigurationError("camera angles and range must be positive")
        if self.sigma_d < 0:
            raise ConfigurationError("sigma_d must be >= 0")


@dataclass
class DroneTruth:
    pos: np.ndarray
    yaw: float
    vel: np.ndarray
    yaw_mode: YawMode = YawMode.CRUISE
    yaw_target: float = 0.0
    turn_rate: float = 1.0
    hold_left: float = 0.0


@dataclass
class Detection:
    z: np.ndarray  # target position in the observer body frame
    truth_id: int  # bookkeeping only; never used for estimation


def _rotate_toward(yaw: float, target: float, step: float) -> tuple[float, bool]:
    delta = wrap_angle(target - yaw)
    if abs(delta) <= step:
        return wrap_angle(target), True
    return wrap_angle(yaw + math.copysign(step, delta)), False


class World:
    """Truth state of every drone, advanced by a single driver loop."""

    def __init__(self, trajectories: Sequence[Trajectory], sigma_v: float, vio_rate: float,
                 camera: CameraModel, seed: int, grid: Optional[OccupancyGrid] = None,
                 dwell: float = 0.5):
        if vio_rate <= 0:
            raise ConfigurationError("vio_rate must be > 0")
        self.trajectories = list(trajectories)
        self.n = len(self.trajectories)
        self.camera = camera
        self.grid = grid
        self.dwell = dwell
        self.vio_rate = vio_rate
        self.time = 0.0
        self._ticks_done = 0
        ss = np.random.SeedSequence(seed)
        drift_ss, det_ss = ss.spawn(2)
        self.vio = [VioModel(sigma_v, vio_rate, np.random.default_rng(s)) for s in drift_ss.spawn(self.n)]
        self.det_rng = [np.random.default_rng(s) for s in det_ss.spawn(self.n)]
        self.drones = []
        for tr in self.trajectories:
            v = tr.velocity(0.0)
            yaw = math.atan2(v[1], v[0]) if np.linalg.norm(v[:2]) > 1e-9 else 0.0
            self.drones.append(DroneTruth(tr.position(0.0), yaw, v))

    # kinematics -------------------------------------------------------
    def step(self, dt: float) -> None:
        if not dt > 0:
            raise ConfigurationError("dt must be > 0")
        self.time += dt
        for tr, d in zip(self.trajectories, self.drones):
            d.pos = tr.position(self.time)
            d.vel = tr.velocity(self.time)
            self._advance_yaw(d, dt)
        due = int(math.floor(self.time * self.vio_rate + 1e-6))
        while self._ticks_done < due:
            self._ticks_done += 1
            for m in self.vio:
                m.tick()

    def _cruise_heading(self, d: DroneTruth) -> float:
        if np.linalg.norm(d.vel[:2]) > 1e-9:
            return math.atan2(d.vel[1], d.vel[0])
        return d.yaw

    def _advance_yaw(self, d: DroneTruth, dt: float) -> None:
        if d.yaw_mode is YawMode.CRUISE:
            d.yaw = self._cruise_heading(d)
        elif d.yaw_mode is YawMode.TURNING:
            d.yaw, done = _rotate_toward(d.yaw, d.yaw_target, d.turn_rate * dt)
            if done:
                d.yaw_mode, d.hold_left = YawMode.HOLDING, self.dwell
        elif d.yaw_mode is YawMode.HOLDING:
            d.hold_left -= dt
            if d.hold_left <= 1e-12:
                d.yaw_mode = YawMode.RETURNING
        else:
            d.yaw, done = _rotate_toward(d.yaw, self._cruise_heading(d), d.turn_rate * dt)
            if done:
                d.yaw_mode = YawMode.CRUISE

    def command_turn(self, i: int, psi_des: float, rate: float) -> None:
        """Start (or preempt with) a turn to ``psi_des``."""
        d = self.drones[i]
        d.yaw_mode, d.yaw_target, d.turn_rate = YawMode.TURNING, wrap_angle(psi_des), rate

    def stop_turn(self, i: int) -> None:
        """Target acquired: stop rotating and dwell at the current yaw."""
        d = self.drones[i]
        if d.yaw_mode is YawMode.TURNING:
            d.yaw_mode, d.hold_left = YawMode.HOLDING, self.dwell

    # sensing ----------------------------------------------------------
    def vio_output(self, i: int) -> tuple[np.ndarray, float]:
        """Drifted position and (drift-free) yaw reported by drone ``i``'s VIO."""
        return self.drones[i].pos + self.vio[i].drift, self.drones[i].yaw

    def true_positions(self) -> np.ndarray:
        return np.array([d.pos for d in self.drones])

    def in_fov(self, i: int) -> list[int]:
        """Drones geometrically detectable by ``i`` (FoV cone, range, line of sight)."""
        me = self.drones[i]
        cam = self.camera
        b = (self.true_positions() - me.pos) @ world_to_body(me.yaw).T
        rng = np.linalg.norm(b, axis=1)
        ok = (rng > 0) & (rng <= cam.max_range)
        ok &= np.abs(np.arctan2(b[:, 1], b[:, 0])) <= cam.h_fov_half
        ok &= np.abs(np.arctan2(b[:, 2], np.hypot(b[:, 0], b[:, 1]))) <= cam.v_fov_half
        ok[i] = False
        out = []
        for j in np.nonzero(ok)[0]:
            if self.grid is None or not self.grid.segment_blocked(me.pos, self.drones[j].pos):
                out.append(int(j))
        return out

    def detect(self, i: int) -> list[Detection]:
        R = world_to_body(self.drones[i].yaw)
        out = []
        for j in self.in_fov(i):
            z = R @ (self.drones[j].pos - self.drones[i].pos)
            if self.camera.sigma_d > 0:
                z = z + self.det_rng[i].normal(0.0, self.camera.sigma_d, 3)
            out.append(Detection(z, j))
        return out


def identify(z, observer: int, observer_odo, observer_yaw: float, shared_odometries,
             drift_estimates, gate: float = 1.0) -> Optional[int]:
    """Label an anonymous detection with the drone nearest to it, or ``None``.

    The detection is lifted into the observer's corrected global frame and
    compared with every other drone's corrected position.  Returns ``None``
    when nothing lies within ``gate`` or when two candidates inside the gate
    are closer than ``gate / 2`` to each other.
    """
    odo = np.asarray(shared_odometries, dtype=float)
    drift = np.asarray(drift_estimates, dtype=float)
    corrected = odo + drift
    lifted = np.asarray(observer_odo, float) + drift[observer] + yaw_to_world(observer_yaw) @ np.asarray(z, float)
    dist = np.linalg.norm(corrected - lifted, axis=1)
    dist[observer] = math.inf
    dist[~np.isfinite(corrected).all(axis=1)] = math.inf
    within = [k for k in np.argsort(dist, kind="stable") if dist[k] <= gate]
    if not within:
        return None
    for a in range(len(within)):
        for b in range(a + 1, len(within)):
            if np.linalg.norm(corrected[within[a]] - corrected[within[b]]) < gate / 2:
                return None
    return int(within[0])
