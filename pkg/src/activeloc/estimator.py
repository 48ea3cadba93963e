"""Swarm-wide error-state Kalman filter over per-drone position drifts.

The state stacks one 3-vector per drone: the correction that, added to the
drone's raw VIO position, yields its position in the true global frame.
Relative measurements between drones only constrain differences of these
corrections, so a common translation of all drones stays unobservable.

Measurement convention: the body-frame detection ``z_ij`` is rotated into the
global frame once, before forming the pseudo-measurement, and the measurement
Jacobian carries no rotation.  Residuals and innovation covariances are
therefore reported in the global frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from activeloc.errors import ConfigurationError, DomainError, MeasurementRejected

BLOCK = 3


def _sl(i: int) -> slice:
    return slice(BLOCK * i, BLOCK * (i + 1))


@dataclass
class DriftState:
    """Stacked drift estimate ``x_tilde`` (3n) with covariance ``P`` (3n x 3n)."""

    n: int
    x_tilde: np.ndarray
    P: np.ndarray
    epoch: int = 0

    def __post_init__(self):
        self.x_tilde = np.asarray(self.x_tilde, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        if self.n < 1:
            raise ConfigurationError(f"agent count must be positive, got {self.n}")
        if self.x_tilde.shape != (BLOCK * self.n,):
            raise ConfigurationError(
                f"x_tilde has shape {self.x_tilde.shape}, expected ({BLOCK * self.n},)"
            )
        if self.P.shape != (BLOCK * self.n, BLOCK * self.n):
            raise ConfigurationError(
                f"P has shape {self.P.shape}, expected {(BLOCK * self.n,) * 2}"
            )

    @classmethod
    def zeros(cls, n: int) -> "DriftState":
        """Frames initially aligned: zero drift, zero covariance."""
        return cls(n, np.zeros(BLOCK * n), np.zeros((BLOCK * n, BLOCK * n)), 0)

    def block(self, i: int, j: int) -> np.ndarray:
        self._check_id(i)
        self._check_id(j)
        return self.P[_sl(i), _sl(j)]

    def drift(self, i: int) -> np.ndarray:
        self._check_id(i)
        return self.x_tilde[_sl(i)]

    def drifts(self) -> np.ndarray:
        return self.x_tilde.reshape(self.n, BLOCK)

    def copy(self) -> "DriftState":
        return DriftState(self.n, self.x_tilde.copy(), self.P.copy(), self.epoch)

    def _check_id(self, i: int) -> None:
        if not 0 <= i < self.n:
            raise ConfigurationError(f"drone id {i} out of range for n={self.n}")


@dataclass
class ProcessNoise:
    """Per-drone drift-increment covariances; the swarm Q is block diagonal."""

    blocks: np.ndarray  # (n, 3, 3)

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=float)
        if self.blocks.ndim != 3 or self.blocks.shape[1:] != (BLOCK, BLOCK):
            raise ConfigurationError(f"Q blocks must be (n, 3, 3), got {self.blocks.shape}")
        b = self.blocks
        asym = np.abs(b - np.swapaxes(b, 1, 2)).max(axis=(1, 2), initial=0.0) > 1e-12
        if asym.any():
            raise ConfigurationError(f"Q_{int(np.argmax(asym))} is not symmetric")
        if len(b):
            tol = -1e-12 * np.maximum(1.0, np.trace(b, axis1=1, axis2=2))
            bad = np.linalg.eigvalsh(b).min(axis=1) < tol
            if bad.any():
                raise ConfigurationError(f"Q_{int(np.argmax(bad))} is not positive semi-definite")

    @classmethod
    def isotropic(cls, n: int, sigma_v: float, ticks=None) -> "ProcessNoise":
        """``Q_i = ticks_i * sigma_v^2 * I3``; ``ticks`` defaults to one per drone."""
        t = np.ones(n) if ticks is None else np.asarray(ticks, dtype=float)
        if t.shape != (n,):
            raise ConfigurationError(f"ticks must have length {n}")
        return cls(t[:, None, None] * (sigma_v**2) * np.eye(BLOCK)[None])

    @property
    def n(self) -> int:
        return self.blocks.shape[0]

    def matrix(self) -> np.ndarray:
        Q = np.zeros((BLOCK * self.n, BLOCK * self.n))
        for i, q in enumerate(self.blocks):
            Q[_sl(i), _sl(i)] = q
        return Q


@dataclass
class RelativeMeasurement:
    """Detection of ``target`` by ``observer``; ``z`` is in the observer body frame.

    ``R_i_G`` rotates global-frame vectors into the observer frame.
    """

    observer: int
    target: int
    z: np.ndarray
    R_i_G: np.ndarray
    N: np.ndarray
    stamp: int

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float).reshape(BLOCK)
        self.R_i_G = np.asarray(self.R_i_G, dtype=float)
        self.N = np.asarray(self.N, dtype=float)
        if self.observer == self.target:
            raise ConfigurationError("observer and target must differ")
        if not np.allclose(self.R_i_G @ self.R_i_G.T, np.eye(BLOCK), atol=1e-9) or (
            np.linalg.det(self.R_i_G) < 0
        ):
            raise ConfigurationError("R_i_G must be a proper rotation")
        if not np.allclose(self.N, self.N.T, atol=1e-12):
            raise ConfigurationError("N must be symmetric")


@dataclass
class Residual:
    r: np.ndarray  # innovation, global frame
    S: np.ndarray  # innovation covariance, global frame
    tr_before: float = field(default=float("nan"))
    tr_after: float = field(default=float("nan"))


def propagate(state: DriftState, q: ProcessNoise) -> DriftState:
    """Random-walk propagation: ``P <- P + Q`` with ``x_tilde`` unchanged.

    Only the diagonal 3x3 blocks are touched, so every inter-drone block keeps
    its exact bits.
    """
    if q.n != state.n:
        raise ConfigurationError(f"process noise for {q.n} drones, state has {state.n}")
    P = state.P.copy()
    for i in range(state.n):
        if np.any(q.blocks[i]):
            P[_sl(i), _sl(i)] += q.blocks[i]
    return DriftState(state.n, state.x_tilde.copy(), P, state.epoch + 1)


def measurement_model(
    m: RelativeMeasurement, odo_i: np.ndarray, odo_j: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Pseudo-measurement ``odo_i + R^T z - odo_j`` and its global-frame noise."""
    R_G_i = m.R_i_G.T
    z_tilde = np.asarray(odo_i, float) + R_G_i @ m.z - np.asarray(odo_j, float)
    N_g = R_G_i @ m.N @ m.R_i_G
    return z_tilde, N_g


def apply_measurement(
    state: DriftState,
    m: RelativeMeasurement,
    odo_i,
    odo_j,
    *,
    max_age: int | None = 10,
    joseph: bool = False,
) -> tuple[DriftState, Residual]:
    """Kalman update of the whole swarm from one relative position measurement.

    Parameters
    ----------
    state : DriftState
        Prior (``t_k^-``) state.
    m : RelativeMeasurement
        Detection of ``m.target`` by ``m.observer``.
    odo_i, odo_j : array_like
        Raw VIO positions of observer and target at the measurement stamp.
    max_age : int or None
        Measurements older than this many epochs are rejected.
    joseph : bool
        Use the Joseph-form covariance update instead of ``P - K H P``.

    Returns
    -------
    (DriftState, Residual)
        Posterior state (same epoch) and the innovation in the global frame.

    Raises
    ------
    MeasurementRejected
        Singular innovation covariance or a stale measurement.
    """
    i, j = m.observer, m.target
    state._check_id(i)
    state._check_id(j)
    if m.stamp > state.epoch:
        raise DomainError(f"measurement stamp {m.stamp} is ahead of epoch {state.epoch}")
    if max_age is not None and state.epoch - m.stamp > max_age:
        raise MeasurementRejected(
            f"measurement {i}->{j} is {state.epoch - m.stamp} epochs old (max {max_age})"
        )

    z_tilde, N_g = measurement_model(m, odo_i, odo_j)
    P = state.P
    x = state.x_tilde
    si, sj = _sl(i), _sl(j)

    # H = [.. -I (i) .. +I (j) ..]; P H^T is a column difference.
    PHt = P[:, sj] - P[:, si]
    HPHt = PHt[sj] - PHt[si]
    S = 0.5 * (HPHt + HPHt.T) + N_g
    r = z_tilde - (x[sj] - x[si])
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise MeasurementRejected(
            f"innovation covariance for {i}->{j} is singular (eigenvalues {np.linalg.eigvalsh(S)})"
        ) from None
    K = np.linalg.solve(S, PHt.T).T

    x_new = x + K @ r
    if joseph:
        H = np.zeros((BLOCK, BLOCK * state.n))
        H[:, si] = -np.eye(BLOCK)
        H[:, sj] = np.eye(BLOCK)
        A = np.eye(BLOCK * state.n) - K @ H
        P_new = A @ P @ A.T + K @ N_g @ K.T
    else:
        P_new = P - K @ PHt.T
    P_new = 0.5 * (P_new + P_new.T)

    new = DriftState(state.n, x_new, P_new, state.epoch)
    res = Residual(
        r=r,
        S=S,
        tr_before=float(np.trace(HPHt)),
        tr_after=float(np.trace(relative_covariance(new, i, j))),
    )
    return new, res


def third_party_blocks(
    state: DriftState, m: RelativeMeasurement, res: Residual, p: int, q: int
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior ``P_pq`` and ``x_tilde_p`` from the per-block correction formulas.

    ``state`` is the prior state that produced ``res``.  This is a diagnostic
    surface: a drone not involved in the observation is corrected only through
    its prior correlation with the observer or the target.
    """
    for k in (p, q):
        state._check_id(k)
    i, j = m.observer, m.target
    B = state.block
    S_inv = np.linalg.inv(res.S)
    gain_p = B(p, j) - B(p, i)
    P_pq = B(p, q) - gain_p @ S_inv @ (B(j, q) - B(i, q))
    x_p = state.drift(p) + gain_p @ S_inv @ res.r
    return P_pq, x_p


def relative_covariance(state: DriftState, i: int, j: int) -> np.ndarray:
    """Covariance of the relative localization ``x_i - x_j``."""
    if i == j:
        raise DomainError("relative covariance needs two distinct drones")
    B = state.block
    C = B(i, i) + B(j, j) - B(i, j) - B(j, i)
    return 0.5 * (C + C.T)


def pair_traces(state: DriftState) -> np.ndarray:
    """``n x n`` matrix of relative-covariance traces; zero on the diagonal."""
    n = state.n
    T = np.einsum("iaja->ij", state.P.reshape(n, BLOCK, n, BLOCK))
    d = np.diag(T)
    return d[:, None] + d[None, :] - T - T.T


def corrected_position(odo, drift_before, drift_after) -> np.ndarray:
    return np.asarray(odo, float) - np.asarray(drift_before, float) + np.asarray(drift_after, float)


def state_rows(state: DriftState, time: float):
    """CSV rows ``(epoch, time, drone, x~x, x~y, x~z, Pxx, Pyy, Pzz)``."""
    for i in range(state.n):
        d = state.drift(i)
        p = np.diag(state.block(i, i))
        yield (state.epoch, time, i, *d.tolist(), *p.tolist())
