import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from activeloc.errors import ConfigurationError
from activeloc.grid import OccupancyGrid
from activeloc.planner import PlannerConfig, visibility_check
from activeloc.sim import CameraModel, Trajectory, VioModel, World, YawMode, identify

CAM0 = CameraModel(sigma_d=0.0)


def _world(starts, velocities=None, sigma_v=0.0, camera=CAM0, grid=None, seed=0, duration=100.0):
    trajs = []
    for k, p in enumerate(starts):
        v = np.zeros(3) if velocities is None else np.asarray(velocities[k], float)
        p = np.asarray(p, float)
        if np.linalg.norm(v) == 0:
            trajs.append(Trajectory([p], 1.0))
        else:
            trajs.append(Trajectory([p, p + v * duration], float(np.linalg.norm(v))))
    return World(trajs, sigma_v, 30.0, camera, seed, grid)


class TestTrajectory:
    def test_constant_speed_polyline(self):
        tr = Trajectory([(0, 0, 1), (3, 0, 1), (3, 4, 1)], 1.0)
        assert tr.end_time == pytest.approx(7.0)
        np.testing.assert_allclose(tr.position(1.5), [1.5, 0, 1])
        np.testing.assert_allclose(tr.position(5.0), [3, 2, 1])
        np.testing.assert_allclose(tr.position(99.0), [3, 4, 1])
        np.testing.assert_allclose(tr.velocity(4.0), [0, 1, 0])
        assert tr.speed_at(99.0) == 0.0

    def test_exit_time(self):
        tr = Trajectory([(0, 0, 1), (10, 0, 1)], 2.0)
        assert tr.exit_time(0.0, (-1, -1, 4, 1)) == pytest.approx(2.0)
        assert tr.exit_time(3.0, (-1, -1, 4, 1)) == 3.0  # already outside
        assert tr.exit_time(0.0, (-1, -1, 20, 1)) == math.inf
        assert tr.exit_time(0.0, None) == math.inf

    def test_exit_on_second_leg(self):
        tr = Trajectory([(0, 0, 1), (2, 0, 1), (2, 5, 1)], 1.0)
        assert tr.exit_time(0.0, (-1, -1, 3, 3)) == pytest.approx(5.0)

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            Trajectory(np.zeros((0, 3)), 1.0)
        with pytest.raises(ConfigurationError):
            Trajectory([(0, 0, 0), (1, 0, 0)], 0.0)


class TestStep:
    def test_zero_velocity_cruise_pose_unchanged(self):
        w = _world([[1, 2, 3]])
        yaw0 = w.drones[0].yaw
        for _ in range(50):
            w.step(1 / 30)
        np.testing.assert_array_equal(w.drones[0].pos, [1, 2, 3])
        assert w.drones[0].yaw == yaw0

    def test_quarter_turn_takes_one_second(self):
        w = _world([[0, 0, 1]], [[1, 0, 0]])
        w.dwell = 0.0
        w.command_turn(0, math.pi / 2, math.pi / 2)
        yaws = []
        for _ in range(150):
            w.step(0.01)
            yaws.append(w.drones[0].yaw)
        reached = next(k for k, y in enumerate(yaws) if y == pytest.approx(math.pi / 2))
        assert (reached + 1) * 0.01 == pytest.approx(1.0, abs=0.011)

    def test_full_cycle_turn_hold_return(self):
        w = _world([[0, 0, 1]], [[1, 0, 0]])
        w.command_turn(0, 1.0, 1.0)
        modes = []
        for _ in range(300):
            w.step(0.01)
            modes.append(w.drones[0].yaw_mode)
        first = {m: modes.index(m) for m in YawMode if m in modes}
        assert first[YawMode.HOLDING] < first[YawMode.RETURNING] < max(k for k, m in enumerate(modes) if m is YawMode.CRUISE)
        assert modes[-1] is YawMode.CRUISE and w.drones[0].yaw == pytest.approx(0.0)
        # hold lasts the dwell
        assert (first[YawMode.RETURNING] - first[YawMode.HOLDING]) * 0.01 == pytest.approx(0.5, abs=0.011)

    def test_turn_respects_rate(self):
        w = _world([[0, 0, 1]], [[1, 0, 0]])
        w.command_turn(0, 3.0, 0.7)
        prev = w.drones[0].yaw
        for _ in range(100):
            w.step(0.02)
            assert abs(w.drones[0].yaw - prev) <= 0.7 * 0.02 + 1e-12
            assert abs(w.drones[0].yaw) <= math.pi
            prev = w.drones[0].yaw

    def test_stop_turn_holds(self):
        w = _world([[0, 0, 1]], [[1, 0, 0]])
        w.command_turn(0, 2.0, 1.0)
        w.step(0.5)
        w.stop_turn(0)
        assert w.drones[0].yaw_mode is YawMode.HOLDING
        assert w.drones[0].yaw == pytest.approx(0.5)

    def test_newer_command_preempts(self):
        w = _world([[0, 0, 1]], [[1, 0, 0]])
        w.command_turn(0, 2.0, 1.0)
        w.step(0.3)
        w.command_turn(0, -1.0, 1.0)
        assert w.drones[0].yaw_target == -1.0
        for _ in range(20):
            w.step(0.1)
        assert w.drones[0].yaw_mode is not YawMode.TURNING

    def test_noise_free_vio_is_truth(self):
        w = _world([[0, 0, 1], [0, 2, 1]], [[1, 0, 0], [1, 0, 0]])
        for _ in range(100):
            w.step(1 / 30)
            for k in range(2):
                np.testing.assert_array_equal(w.vio_output(k)[0], w.drones[k].pos)

    def test_vio_output_adds_drift(self):
        w = _world([[1, 1, 1]], sigma_v=0.01)
        np.testing.assert_array_equal(w.vio_output(0)[0], [1, 1, 1])  # t = 0
        w.vio[0].drift = np.array([0.2, 0, 0])
        np.testing.assert_allclose(w.vio_output(0)[0], [1.2, 1, 1])

    def test_tick_schedule(self):
        w = _world([[0, 0, 0]], sigma_v=0.01)
        for _ in range(90):
            w.step(1 / 90)
        assert w._ticks_done == 30 and w.vio[0].ticks == 30

    def test_bad_dt(self):
        with pytest.raises(ConfigurationError):
            _world([[0, 0, 0]]).step(0.0)

    def test_bit_deterministic(self):
        def trace(seed):
            w = _world([[0, 0, 1], [2, 0, 1]], [[1, 0, 0], [1, 0, 0]], sigma_v=0.01,
                       camera=CameraModel(sigma_d=0.05), seed=seed)
            out = []
            for _ in range(60):
                w.step(1 / 30)
                out.append(np.concatenate([w.vio_output(0)[0], w.vio_output(1)[0]]))
                out.extend(d.z for d in w.detect(0))
            return np.concatenate(out)

        assert np.array_equal(trace(5), trace(5))
        assert not np.array_equal(trace(5), trace(6))


def test_random_walk_variance_monte_carlo():
    k, sigma = 40, 0.01
    finals = []
    for seed in range(1000):
        m = VioModel(sigma, 30.0, np.random.default_rng(seed))
        for _ in range(k):
            m.tick()
        finals.append(m.drift)
    var = np.var(np.array(finals), axis=0)
    np.testing.assert_allclose(var, k * sigma**2, rtol=0.10)


class TestDetect:
    def test_dead_ahead(self):
        w = _world([[0, 0, 1], [2, 0, 1]])
        dets = w.detect(0)
        assert len(dets) == 1
        np.testing.assert_allclose(dets[0].z, [2, 0, 0])

    def test_body_frame_rotation(self):
        w = _world([[0, 0, 1], [0, 2, 1]])
        w.drones[0].yaw = math.pi / 2
        np.testing.assert_allclose(w.detect(0)[0].z, [2, 0, 0], atol=1e-12)

    def test_beyond_range(self):
        assert _world([[0, 0, 1], [3.5, 0, 1]]).detect(0) == []

    def test_outside_horizontal_fov(self):
        p = [2 * math.cos(math.radians(60)), 2 * math.sin(math.radians(60)), 1]
        assert _world([[0, 0, 1], p]).detect(0) == []

    def test_outside_vertical_fov(self):
        assert _world([[0, 0, 1], [1.0, 0, 2.0]]).detect(0) == []
        assert len(_world([[0, 0, 1], [2.0, 0, 1.5]]).detect(0)) == 1

    def test_occluded(self):
        g = OccupancyGrid.from_rectangles([-2, -2], 0.1, [6, 4], [[0.9, -1, 1.1, 1]])
        assert _world([[0, 0, 1], [2, 0, 1]], grid=g).detect(0) == []

    def test_noise_matches_sigma_d(self):
        w = _world([[0, 0, 1], [2, 0, 1]], camera=CameraModel(sigma_d=0.05), seed=3)
        z = np.array([w.detect(0)[0].z for _ in range(4000)])
        np.testing.assert_allclose(z.std(axis=0), 0.05, rtol=0.05)
        np.testing.assert_allclose(z.mean(axis=0), [2, 0, 0], atol=0.005)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi), st.integers(0, 3))
    def test_detect_consistent_with_visibility(self, x, y, yaw, wall):
        rects = [[-0.5, 0.4, 0.5, 0.6], [0.4, -2, 0.6, 2], [-3, -3, -2.5, 3], []][wall]
        g = OccupancyGrid.from_rectangles([-4, -4], 0.1, [8, 8], [rects] if rects else [])
        w = _world([[0, 0, 1], [x, y, 1]], grid=g)
        w.drones[0].yaw = yaw
        cfg = PlannerConfig()
        for d in w.detect(0):
            assert visibility_check(w.drones[0].pos, w.drones[d.truth_id].pos, g, cfg)


class TestIdentify:
    ODO = np.array([[0, 0, 1], [2, 0, 1], [0, 2, 1.0]])

    def test_single_candidate(self):
        j = identify([1.95, 0.05, 0], 0, self.ODO[0], 0.0, self.ODO, np.zeros((3, 3)))
        assert j == 1

    def test_uses_observer_yaw(self):
        j = identify([2, 0, 0], 0, self.ODO[0], math.pi / 2, self.ODO, np.zeros((3, 3)))
        assert j == 2

    def test_nothing_in_gate(self):
        assert identify([0, -2, 0], 0, self.ODO[0], 0.0, self.ODO, np.zeros((3, 3))) is None

    def test_ambiguous_pair(self):
        odo = np.array([[0, 0, 1], [2, 0, 1], [2, 0.3, 1.0]])
        assert identify([2, 0.15, 0], 0, odo[0], 0.0, odo, np.zeros((3, 3))) is None

    def test_drift_estimates_shift_candidates(self):
        drift = np.zeros((3, 3))
        drift[1] = [0, -1.5, 0]
        assert identify([2, -1.5, 0], 0, self.ODO[0], 0.0, self.ODO, drift) == 1

    def test_unknown_odometry_skipped(self):
        odo = self.ODO.copy()
        odo[1] = np.nan
        assert identify([2, 0, 0], 0, odo[0], 0.0, odo, np.zeros((3, 3))) is None

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000))
    def test_noise_free_never_mislabels(self, seed):
        rng = np.random.default_rng(seed)
        pos = rng.uniform(-4, 4, size=(5, 3))
        drift = rng.normal(0, 0.5, size=(5, 3))
        odo = pos - drift  # odometry + drift estimate = truth
        i = int(rng.integers(5))
        yaw = float(rng.uniform(-math.pi, math.pi))
        c, s = math.cos(yaw), math.sin(yaw)
        for j in range(5):
            if j == i:
                continue
            rel = pos[j] - pos[i]
            z = np.array([c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1], rel[2]])
            got = identify(z, i, odo[i], yaw, odo, drift)
            assert got in (j, None)
