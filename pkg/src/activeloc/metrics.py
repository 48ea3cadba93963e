"""Evaluation metrics and timing benchmarks."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from activeloc.errors import DomainError
from activeloc.estimator import DriftState, RelativeMeasurement, apply_measurement


@dataclass
class EvalSample:
    time: float
    truth: np.ndarray  # (n, 3)
    raw: np.ndarray  # (n, 3) VIO output
    corrected: np.ndarray  # (n, 3) VIO + broadcast drift estimate

    def __post_init__(self):
        self.truth = np.asarray(self.truth, float)
        self.raw = np.asarray(self.raw, float)
        self.corrected = np.asarray(self.corrected, float)
        if not (self.truth.shape == self.raw.shape == self.corrected.shape) or self.truth.ndim != 2:
            raise DomainError("truth, raw and corrected must all be (n, 3)")

    @property
    def n(self) -> int:
        return len(self.truth)

    def source(self, name: str) -> np.ndarray:
        if name not in ("raw", "corrected"):
            raise DomainError(f"unknown source '{name}'")
        return self.raw if name == "raw" else self.corrected


def rpe(truth, estimate, unordered: bool = False) -> float:
    """Total relative position error over drone pairs.

    By default every *ordered* pair (i, j) is summed, so each unordered pair
    contributes twice.  ``unordered=True`` halves the result.
    """
    x = np.asarray(truth, float)
    xh = np.asarray(estimate, float)
    if len(x) < 2:
        raise DomainError("rpe needs at least two drones")
    e = x - xh
    total = float(np.linalg.norm(e[:, None, :] - e[None, :, :], axis=2).sum())
    return total / 2 if unordered else total


def sample_rpe(sample: EvalSample, source: str = "corrected", unordered: bool = False) -> float:
    return rpe(sample.truth, sample.source(source), unordered)


def rmse(samples: Sequence[EvalSample], drone: int, source: str = "corrected") -> float:
    if not samples:
        raise DomainError("rmse needs at least one sample")
    err = np.array([np.linalg.norm(s.source(source)[drone] - s.truth[drone]) for s in samples])
    return float(math.sqrt(np.mean(err**2)))


def summarize(samples: Sequence[EvalSample], unordered: bool = False) -> dict:
    """Deterministic summary: RPE (final and time-averaged) and per-drone RMSE."""
    final = samples[-1]
    out = {"n_drones": final.n, "n_samples": len(samples), "final_time": round(final.time, 9),
           "rpe_pairs": "unordered" if unordered else "ordered"}
    for src in ("raw", "corrected"):
        out[f"final_rpe_{src}"] = sample_rpe(final, src, unordered)
        out[f"mean_rpe_{src}"] = float(np.mean([sample_rpe(s, src, unordered) for s in samples]))
    raw = [rmse(samples, k, "raw") for k in range(final.n)]
    cor = [rmse(samples, k, "corrected") for k in range(final.n)]
    out["rmse_raw"] = raw
    out["rmse_corrected"] = cor
    out["rmse_reduction_pct"] = [100.0 * (1 - c / r) if r > 0 else 0.0 for r, c in zip(raw, cor)]
    out["drones_improved"] = int(sum(c < r for r, c in zip(raw, cor)))
    fr = out["final_rpe_raw"]
    out["final_rpe_reduction_pct"] = 100.0 * (1 - out["final_rpe_corrected"] / fr) if fr > 0 else 0.0
    return out


# timing -------------------------------------------------------------------

def _random_state(rng: np.random.Generator, n: int, scale: float = 0.05) -> DriftState:
    A = rng.normal(size=(3 * n, 3 * n)) * scale
    P = A @ A.T / (3 * n) + 1e-4 * np.eye(3 * n)
    return DriftState(n, rng.normal(size=3 * n) * 0.05, P, epoch=0)


def bench_timing(n_agents: Iterable[int] = (10, 25, 50, 100), repetitions: int = 20,
                 seed: int = 0) -> list[dict]:
    """Median wall time of one filter update and one planning cycle per swarm size."""
    from activeloc.planner import DroneView, Planner, PlannerConfig, Snapshot

    rng = np.random.default_rng(seed)
    rows = []
    for n in n_agents:
        state = _random_state(rng, n)
        N = 0.02**2 * np.eye(3)
        upd = []
        for r in range(repetitions):
            i, j = rng.choice(n, 2, replace=False)
            m = RelativeMeasurement(int(i), int(j), rng.normal(size=3), np.eye(3), N, 0)
            t0 = time.perf_counter()
            apply_measurement(state, m, np.zeros(3), np.zeros(3))
            upd.append(time.perf_counter() - t0)

        cols = max(1, int(math.ceil(math.sqrt(n))))
        pos = np.array([[2.0 * (k // cols), 2.0 * (k % cols), 1.0] for k in range(n)])
        views = [DroneView(p, 0.0) for p in pos]
        cfg = PlannerConfig(min_retrigger_interval=0.0)
        planner = Planner(cfg)
        plan = []
        for r in range(repetitions):
            t0 = time.perf_counter()
            planner.plan(state, Snapshot(float(r), views))
            plan.append(time.perf_counter() - t0)
        tm = {k: v / repetitions for k, v in planner.timers.items()}
        rows.append({
            "n": int(n),
            "update_s": float(np.median(upd)),
            "plan_s": float(np.median(plan)),
            "plan_traces_s": tm["traces"],
            "plan_ellipses_s": tm["ellipses"],
            "plan_roles_checks_s": tm["roles_checks"],
        })
    return rows


def quadratic_fit_r2(ns: Sequence[float], ts: Sequence[float]) -> float:
    """R^2 of a least-squares quadratic fit ``t = a n^2 + b n + c``."""
    ns = np.asarray(ns, float)
    ts = np.asarray(ts, float)
    coef = np.polyfit(ns, ts, 2)
    pred = np.polyval(coef, ns)
    ss_res = float(np.sum((ts - pred) ** 2))
    ss_tot = float(np.sum((ts - ts.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
