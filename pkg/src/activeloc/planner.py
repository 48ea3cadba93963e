"""Covariance-triggered yaw planning for active mutual observation.

Pipeline per planning cycle: rank drone pairs by the trace of their relative
localization covariance, pick observer/target by the smaller required yaw
change, compute the commanded yaw from the target's confidence ellipse, then
veto the task if the turn is unsafe or the target cannot be seen.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from activeloc.errors import ConfigurationError, DomainError, InfeasibleObservation
from activeloc.estimator import DriftState, pair_traces, relative_covariance
from activeloc.geometry import wrap_angle
from activeloc.grid import OccupancyGrid

_EIG_TOL = 1e-12


@dataclass(frozen=True)
class PlannerConfig:
    trace_threshold: float = 0.001
    confidence: float = 0.95
    fov_half_angle: float = math.radians(43.5)
    max_range: float = 3.0
    turn_rate: float = 1.0
    a_max: float = 4.0
    min_retrigger_interval: float = 2.0
    max_pairs_per_cycle: int = 3

    def __post_init__(self):
        if not self.trace_threshold > 0:
            raise ConfigurationError("trace_threshold must be > 0")
        if not 0 < self.confidence < 1:
            raise ConfigurationError("confidence must lie in (0, 1)")
        if not 0 < self.fov_half_angle < math.pi / 2:
            raise ConfigurationError("fov_half_angle must lie in (0, pi/2)")
        if not self.max_range > 0:
            raise ConfigurationError("max_range must be > 0")
        if not self.turn_rate > 0:
            raise ConfigurationError("turn_rate must be > 0")
        if not self.a_max > 0:
            raise ConfigurationError("a_max must be > 0")
        if self.min_retrigger_interval < 0:
            raise ConfigurationError("min_retrigger_interval must be >= 0")
        if self.max_pairs_per_cycle < 1:
            raise ConfigurationError("max_pairs_per_cycle must be >= 1")


@dataclass(frozen=True)
class ConfidenceEllipse:
    """Confidence region of the target, centered at ``center``.

    ``center`` is expressed in the same frame as the observer position later
    handed to :func:`desired_yaw`; the planner works observer-relative, with
    the observer at the origin.
    """

    center: np.ndarray
    lambda1: float
    lambda2: float
    alpha: float
    s: float

    @property
    def semi_axes(self) -> tuple[float, float]:
        return math.sqrt(self.s * self.lambda1), math.sqrt(self.s * self.lambda2)

    def shape_factor(self) -> np.ndarray:
        """``L`` with ``L @ L.T = s * cov``; maps the unit circle onto the boundary."""
        a, b = self.semi_axes
        c, sn = math.cos(self.alpha), math.sin(self.alpha)
        return np.array([[c, -sn], [sn, c]]) @ np.diag([a, b])

    def boundary(self, k: int = 64) -> np.ndarray:
        t = np.linspace(0.0, 2 * math.pi, k, endpoint=False)
        return self.center + (self.shape_factor() @ np.stack([np.cos(t), np.sin(t)])).T


@dataclass
class ObservationTask:
    observer: int
    target: int
    psi_des: float
    psi_cur: float
    t_turn: float
    issued_at: float
    trace: float = float("nan")
    expected_rel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def delta_psi(self) -> float:
        return wrap_angle(self.psi_des - self.psi_cur)


@dataclass
class DroneView:
    """What the leader knows about one drone when planning."""

    pos: np.ndarray  # corrected estimate, global frame
    yaw: float
    t_out: float = math.inf  # time the scripted path leaves the known map
    speed_at: Callable[[float], float] = lambda t: 0.0


@dataclass
class Snapshot:
    time: float
    drones: Sequence[DroneView]
    grid: Optional[OccupancyGrid] = None
    busy: frozenset = frozenset()


@dataclass
class Decision:
    """One planner log row."""

    time: float
    observer: int
    target: int
    trace: float
    psi_cur: float
    psi_des: float
    t_turn: float
    verdict: str
    reason: str = ""

    HEADER = ("time", "observer", "target", "tr_ij", "psi_cur", "psi_des", "t_turn", "verdict", "rejection_reason")

    def row(self):
        return (self.time, self.observer, self.target, self.trace, self.psi_cur, self.psi_des,
                self.t_turn, self.verdict, self.reason)


def chi_square_scale(confidence: float) -> float:
    """Two-dof chi-square quantile: ``-2 ln(1 - confidence)``."""
    if not 0 < confidence < 1:
        raise DomainError(f"confidence must lie in (0, 1), got {confidence}")
    return -2.0 * math.log1p(-confidence)


def _fold_axis_angle(a: float) -> float:
    # axis direction is sign-free; fold into (-pi/2, pi/2]
    if a > math.pi / 2:
        a -= math.pi
    elif a <= -math.pi / 2:
        a += math.pi
    return a


def confidence_ellipse(cov_xy, rel_center, confidence: float) -> ConfidenceEllipse:
    cov = np.asarray(cov_xy, dtype=float)
    if cov.shape != (2, 2):
        raise DomainError(f"cov_xy must be 2x2, got {cov.shape}")
    scale = max(np.abs(cov).max(), 1e-300)
    if abs(cov[0, 1] - cov[1, 0]) > 1e-9 * scale:
        raise DomainError("cov_xy is not symmetric")
    cov = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(cov)
    if w[0] < -1e-9 * scale:
        raise DomainError(f"cov_xy is not PSD (eigenvalues {w})")
    lam1, lam2 = max(w[1], 0.0), max(w[0], 0.0)
    if lam1 - lam2 <= _EIG_TOL * max(scale, 1.0):
        alpha = 0.0  # isotropic: orientation is arbitrary
    else:
        alpha = _fold_axis_angle(math.atan2(v[1, 1], v[0, 1]))
    return ConfidenceEllipse(
        np.asarray(rel_center, dtype=float).reshape(2), float(lam1), float(lam2), alpha,
        chi_square_scale(confidence),
    )


def subtended_interval(observer_pos, ellipse: ConfidenceEllipse) -> tuple[float, float, float]:
    """Bearing to the ellipse center and the signed angular offsets of its two tangents.

    Returns ``(phi_c, lo, hi)`` with ``lo <= 0 <= hi``: every point of the
    ellipse is seen from the observer at a bearing in ``[phi_c + lo, phi_c + hi]``.
    """
    o = np.asarray(observer_pos, dtype=float)[:2]
    d = ellipse.center - o
    dist = math.hypot(d[0], d[1])
    if dist == 0.0:
        raise DomainError("ellipse center coincides with the observer")
    phi_c = math.atan2(d[1], d[0])
    L = ellipse.shape_factor()
    if np.abs(L).max() <= 1e-12 * dist:
        return phi_c, 0.0, 0.0
    # boundary b(t) = c + L e(t); tangency: cross(b - o, b') = 0
    #   => g . e'(t) = -det L,  g = L^T [-d_y, d_x]
    g = L.T @ np.array([-d[1], d[0]])
    det_l = float(np.linalg.det(L))
    g_norm = math.hypot(g[0], g[1])
    if g_norm <= abs(det_l):
        raise InfeasibleObservation("observer lies inside the confidence ellipse")
    phi = math.atan2(-g[0], g[1])
    half = math.acos(-det_l / g_norm)
    offsets = []
    for t in (phi + half, phi - half):
        p = d + L @ np.array([math.cos(t), math.sin(t)])
        offsets.append(wrap_angle(math.atan2(p[1], p[0]) - phi_c))
    return phi_c, min(offsets), max(offsets)


def desired_yaw(observer_pos, observer_yaw: float, ellipse: ConfidenceEllipse,
                config: PlannerConfig) -> float:
    """Yaw that brings the whole confidence ellipse into the horizontal FoV.

    Turning stops as soon as the trailing FoV edge is tangent to the ellipse,
    i.e. the result is the admissible yaw closest to ``observer_yaw``.  If the
    ellipse is wider than the FoV, the camera is pointed at its center.
    """
    phi_c, lo, hi = subtended_interval(observer_pos, ellipse)
    h = config.fov_half_angle
    if hi - lo > 2 * h:
        return wrap_angle(phi_c)
    a_lo, a_hi = hi - h, lo + h  # admissible yaw offsets from phi_c
    e = wrap_angle(observer_yaw - phi_c)
    if a_lo <= e <= a_hi:
        return wrap_angle(observer_yaw)
    best = None
    for target in (a_lo, a_hi):
        delta = wrap_angle(target - e)
        key = (abs(delta), 0 if delta > 0 else 1)
        if best is None or key < best[0]:
            best = (key, delta)
    return wrap_angle(observer_yaw + best[1])


def pair_ellipse(state: DriftState, i: int, j: int, rel_center, confidence: float) -> ConfidenceEllipse:
    cov = relative_covariance(state, i, j)[:2, :2]
    return confidence_ellipse(cov, rel_center, confidence)


def _yaw_for(view_obs: DroneView, view_tgt: DroneView, ell_cov: np.ndarray,
             config: PlannerConfig) -> float:
    rel = (view_tgt.pos - view_obs.pos)[:2]
    ell = confidence_ellipse(ell_cov, rel, config.confidence)
    try:
        return desired_yaw(np.zeros(2), view_obs.yaw, ell, config)
    except InfeasibleObservation:
        return math.atan2(rel[1], rel[0])


def role_options(i: int, j: int, views: Sequence[DroneView], state: DriftState,
                 config: PlannerConfig) -> list[tuple[int, int, float]]:
    """Both role assignments ``(observer, target, psi_des)``, best first.

    Smaller required yaw change observes; ties go to the lower id.
    """
    cov = relative_covariance(state, i, j)[:2, :2]
    out = []
    for obs, tgt in ((i, j), (j, i)):
        try:
            psi = _yaw_for(views[obs], views[tgt], cov, config)
        except DomainError:
            continue
        out.append((abs(wrap_angle(psi - views[obs].yaw)), obs, tgt, psi))
    out.sort(key=lambda r: (r[0], r[1]))
    return [(o, t, p) for _, o, t, p in out]


def assign_roles(i: int, j: int, views: Sequence[DroneView], state: DriftState,
                 config: PlannerConfig) -> Optional[tuple[int, int]]:
    opts = role_options(i, j, views, state, config)
    if not opts:
        return None
    return opts[0][0], opts[0][1]


def turn_time(delta_psi: float, turn_rate: float) -> float:
    """Round trip: out to the commanded yaw and back to the cruise heading."""
    return 2.0 * abs(delta_psi) / turn_rate


def safety_check(task: ObservationTask, t_out: float, t_cur: float, v_after: float,
                 config: PlannerConfig) -> bool:
    """The drone must still be able to stop inside the known map after turning."""
    t_turn = turn_time(task.psi_des - task.psi_cur, config.turn_rate)
    if math.isinf(t_out):
        return True
    return config.a_max * (t_out - t_cur - t_turn) >= v_after


def visibility_check(observer_pos, target_est_pos, grid: Optional[OccupancyGrid],
                     config: PlannerConfig) -> bool:
    a = np.asarray(observer_pos, float)
    b = np.asarray(target_est_pos, float)
    if np.linalg.norm(b - a) > config.max_range:
        return False
    return grid is None or not grid.segment_blocked(a, b)


def ranked_pairs(state: DriftState, config: PlannerConfig, positions=None, excluded=frozenset(),
                 traces: Optional[np.ndarray] = None) -> list[tuple[float, int, int]]:
    """Pairs with ``tr_ij >= threshold``, highest trace first, ties by ``(i, j)``.

    With ``positions`` given, pairs farther apart than the sensing range are
    dropped before ranking.
    """
    T = pair_traces(state) if traces is None else traces
    iu, ju = np.triu_indices(state.n, 1)
    tr = T[iu, ju]
    mask = tr >= config.trace_threshold
    if positions is not None:
        pos = np.asarray(positions, float)
        mask &= np.linalg.norm(pos[iu] - pos[ju], axis=1) <= config.max_range
    keep = np.nonzero(mask)[0]
    order = keep[np.lexsort((ju[keep], iu[keep], -tr[keep]))]
    return [(float(tr[k]), int(iu[k]), int(ju[k])) for k in order
            if (int(iu[k]), int(ju[k])) not in excluded]


def select_pair(state: DriftState, positions, config: PlannerConfig,
                excluded=frozenset()) -> Optional[tuple[int, int]]:
    ranked = ranked_pairs(state, config, positions, excluded)
    return (ranked[0][1], ranked[0][2]) if ranked else None


def batch_ellipse_axes(state: DriftState, pairs: np.ndarray) -> np.ndarray:
    """Eigenvalues of the xy relative covariance for many pairs at once, ``(k, 2)``."""
    if len(pairs) == 0:
        return np.zeros((0, 2))
    n = state.n
    P = state.P.reshape(n, 3, n, 3)[:, :2, :, :2]
    i, j = pairs[:, 0], pairs[:, 1]
    C = P[i, :, i] + P[j, :, j] - P[i, :, j] - P[j, :, i]
    return np.linalg.eigvalsh(0.5 * (C + np.swapaxes(C, 1, 2)))


class Planner:
    """Stateful wrapper holding the per-pair retrigger cooldown ledger."""

    def __init__(self, config: PlannerConfig):
        self.config = config
        self.last_issued: dict[tuple[int, int], float] = {}
        self.timers = {"traces": 0.0, "ellipses": 0.0, "roles_checks": 0.0}

    def cooling(self, now: float) -> frozenset:
        dt = self.config.min_retrigger_interval
        return frozenset(p for p, t in self.last_issued.items() if now - t < dt)

    def plan(self, state: DriftState, snap: Snapshot) -> tuple[Optional[ObservationTask], list[Decision]]:
        """Return at most one task and the decisions taken along the way."""
        cfg = self.config
        now = snap.time
        views = snap.drones
        t0 = time.perf_counter()
        excluded = set(self.cooling(now))
        busy = sorted(snap.busy)
        # a busy drone can still be a target; only pairs of two busy drones are skipped
        excluded.update((a, b) for x, a in enumerate(busy) for b in busy[x + 1:])
        pos = np.array([v.pos for v in views])
        ranked = ranked_pairs(state, cfg, pos, frozenset(excluded))
        t1 = time.perf_counter()
        # confidence areas of every qualifying pair
        batch_ellipse_axes(state, np.array([(i, j) for _, i, j in ranked], dtype=int).reshape(-1, 2))
        t2 = time.perf_counter()

        decisions: list[Decision] = []
        task = None
        for tr, i, j in ranked[: cfg.max_pairs_per_cycle]:
            opts = [o for o in role_options(i, j, views, state, cfg) if o[0] not in snap.busy]
            if not opts:
                decisions.append(Decision(now, i, j, tr, math.nan, math.nan, math.nan,
                                          "rejected", "no_feasible_role"))
                continue
            for obs, tgt, psi in opts:
                v = views[obs]
                cand = ObservationTask(obs, tgt, psi, v.yaw, turn_time(psi - v.yaw, cfg.turn_rate), now,
                                       tr, np.asarray(views[tgt].pos - v.pos, float))
                reason = ""
                t_out = max(v.t_out, now)
                if not safety_check(cand, t_out, now, v.speed_at(now + cand.t_turn), cfg):
                    reason = "unsafe_turn"
                elif not visibility_check(v.pos, views[tgt].pos, snap.grid, cfg):
                    reason = "occluded"
                if reason:
                    decisions.append(Decision(now, obs, tgt, tr, v.yaw, psi, cand.t_turn, "rejected", reason))
                    continue
                decisions.append(Decision(now, obs, tgt, tr, v.yaw, psi, cand.t_turn, "issued"))
                task = cand
                break
            if task is not None:
                self.last_issued[(i, j)] = now
                break
        t3 = time.perf_counter()
        self.timers["traces"] += t1 - t0
        self.timers["ellipses"] += t2 - t1
        self.timers["roles_checks"] += t3 - t2
        return task, decisions
