"""Command-line scenario runner.

Exit codes: 0 ok, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from activeloc import __version__
from activeloc.config import BUILTIN_SWEEPS, ScenarioConfig, dump, resolve, with_overrides
from activeloc.errors import ConfigurationError
from activeloc.metrics import bench_timing, summarize
from activeloc.planner import Decision
from activeloc.runner import RunResult, run

log = logging.getLogger("activeloc")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

SWEEP_AXES = ("sigma_v", "sigma_d", "n_drones")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _sample_rows(result: RunResult):
    for s in result.samples:
        for k in range(s.n):
            yield (s.time, k, *s.truth[k].tolist(), *s.raw[k].tolist(), *s.corrected[k].tolist())


def run_dir(out: Path, cfg: ScenarioConfig) -> Path:
    return out / f"v{__version__}" / cfg.name / f"seed-{cfg.seed}"


def run_scenario(cfg: ScenarioConfig, out: Optional[Path], unordered: bool = False) -> dict:
    """Run one scenario; write artifacts under ``out`` when given. Returns the metrics summary."""
    t0 = time.perf_counter()
    result = run(cfg, trace_messages=out is not None)
    wall = time.perf_counter() - t0
    metrics = summarize(result.samples, unordered)
    metrics.update(scenario=cfg.name, seed=cfg.seed, version=__version__,
                   n_updates=len(result.updates), n_tasks=len(result.tasks),
                   n_rejections=sum(1 for d in result.decisions if d[7] == "rejected"))
    if out is None:
        return metrics
    d = run_dir(out, cfg)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.yaml").write_text(dump(cfg))
    _write_csv(d / "truth.csv", ("time", "drone", "x", "y", "z", "yaw", "drift_x", "drift_y", "drift_z"),
               result.truth_rows)
    _write_csv(d / "estimator.csv", ("epoch", "time", "drone", "dx", "dy", "dz", "Pxx", "Pyy", "Pzz"),
               result.estimator_rows)
    _write_csv(d / "planner.csv", Decision.HEADER, result.decisions)
    _write_csv(d / "tasks.csv", ("time", "observer", "target", "psi_cur", "psi_des", "t_turn", "tr_ij"),
               result.tasks)
    _write_csv(d / "pair_traces.csv", ("time", "i", "j", "tr_ij"), result.pair_traces)
    _write_csv(d / "updates.csv", ("time", "epoch", "stamp", "observer", "target", "truth_target",
                                   "rx", "ry", "rz", "tr_before", "tr_after"), result.updates)
    _write_csv(d / "messages.csv", ("send_time", "deliver_time", "kind", "sender", "receiver", "dropped"),
               result.messages)
    _write_csv(d / "diagnostics.csv", ("time", "kind", "a", "b", "detail"), result.diagnostics)
    _write_csv(d / "samples.csv", ("time", "drone", "true_x", "true_y", "true_z", "raw_x", "raw_y", "raw_z",
                                   "cor_x", "cor_y", "cor_z"), _sample_rows(result))
    (d / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    timers = result.leader.planner.timers
    (d / "timing.json").write_text(json.dumps({"wall_s": wall, "planner_timers_s": timers},
                                              indent=2, sort_keys=True) + "\n")
    log.info("wrote %s", d)
    return metrics


def parse_sweep(spec: str) -> dict[str, list]:
    """``"sigma_v=0.001,0.002;sigma_d=0.02"``, ``"n_drones=10,25"`` or a built-in sweep name."""
    if spec in BUILTIN_SWEEPS:
        return {k: list(v) for k, v in BUILTIN_SWEEPS[spec].items()}
    axes: dict[str, list] = {}
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        key, sep, vals = part.partition("=")
        key = key.strip()
        if not sep or key not in SWEEP_AXES:
            raise ConfigurationError(f"sweep axis '{part}': expected one of {SWEEP_AXES} as key=v1,v2")
        cast = int if key == "n_drones" else float
        try:
            axes[key] = [cast(v) for v in vals.split(",") if v.strip()]
        except ValueError:
            raise ConfigurationError(f"sweep axis '{key}': non-numeric value in '{vals}'") from None
        if not axes[key]:
            raise ConfigurationError(f"sweep axis '{key}' is empty")
    if not axes:
        raise ConfigurationError("empty sweep specification")
    if "n_drones" in axes and len(axes) > 1:
        raise ConfigurationError("n_drones cannot be combined with noise axes")
    return axes


SWEEP_METRICS = ("final_rpe_corrected", "final_rpe_raw", "mean_rpe_corrected", "mean_rpe_raw",
                 "rmse_raw_mean", "rmse_corrected_mean", "drones_improved")


def run_sweep(base: ScenarioConfig, axes: dict[str, list], seeds: Sequence[int],
              out: Optional[Path], unordered: bool = False) -> tuple[list, list]:
    """One row per (cell, seed) plus a per-cell median table."""
    keys = list(axes)
    rows, agg = [], []
    for cell in itertools.product(*(axes[k] for k in keys)):
        vals = []
        for seed in seeds:
            cfg = with_overrides(base, seed=seed, **dict(zip(keys, cell)))
            m = run_scenario(cfg, None, unordered)
            rec = [m["final_rpe_corrected"], m["final_rpe_raw"], m["mean_rpe_corrected"], m["mean_rpe_raw"],
                   float(np.mean(m["rmse_raw"])), float(np.mean(m["rmse_corrected"])), m["drones_improved"]]
            rows.append((*cell, seed, *rec))
            vals.append(rec)
        agg.append((*cell, len(seeds), *np.median(np.array(vals, float), axis=0).tolist()))
    if out is not None:
        d = out / f"v{__version__}" / f"{base.name}-sweep"
        d.mkdir(parents=True, exist_ok=True)
        _write_csv(d / "sweep_rows.csv", (*keys, "seed", *SWEEP_METRICS), rows)
        _write_csv(d / "sweep_aggregate.csv", (*keys, "n_seeds", *(f"median_{m}" for m in SWEEP_METRICS)), agg)
        (d / "config.yaml").write_text(dump(base))
        log.info("wrote %s", d)
    return rows, agg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="activeloc", description="Swarm drift-correction simulator.")
    p.add_argument("--scenario", default="line4", help="built-in name or YAML file (default: line4)")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output root (default: runs)")
    p.add_argument("--sweep", default=None,
                   help="'sigma_v=a,b;sigma_d=c,d', 'n_drones=10,25' or a built-in sweep (noise-grid)")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds starting at --seed")
    p.add_argument("--unordered-pairs", action="store_true", help="count each drone pair once in RPE")
    p.add_argument("--bench", default=None, metavar="N1,N2,...",
                   help="time filter updates and planning cycles for these swarm sizes")
    p.add_argument("--repetitions", type=int, default=20, help="repetitions per size for --bench")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _bench(args) -> None:
    try:
        sizes = [int(v) for v in args.bench.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"--bench expects integers, got '{args.bench}'") from None
    if not sizes or min(sizes) < 2:
        raise ConfigurationError("--bench sizes must be >= 2")
    rows = bench_timing(sizes, args.repetitions)
    d = args.out / f"v{__version__}" / "bench"
    d.mkdir(parents=True, exist_ok=True)
    header = list(rows[0])
    _write_csv(d / "bench.csv", header, [[r[h] for h in header] for r in rows])
    for r in rows:
        print(f"n={r['n']:4d}  update {1e3 * r['update_s']:8.3f} ms  plan {1e3 * r['plan_s']:8.3f} ms")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seeds < 1:
            raise ConfigurationError("--seeds must be >= 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigurationError("--seed must be >= 0")
        if args.bench:
            _bench(args)
            return EXIT_OK
        cfg = resolve(args.scenario)
        if args.seed is not None:
            cfg = with_overrides(cfg, seed=args.seed)
        seeds = [cfg.seed + k for k in range(args.seeds)]
        if args.sweep is None and cfg.name in BUILTIN_SWEEPS:
            args.sweep = cfg.name
        if args.sweep is not None:
            _, agg = run_sweep(cfg, parse_sweep(args.sweep), seeds, args.out, args.unordered_pairs)
            print(f"{len(agg)} cells x {len(seeds)} seeds written under {args.out}")
            return EXIT_OK
        for seed in seeds:
            m = run_scenario(with_overrides(cfg, seed=seed), args.out, args.unordered_pairs)
            print(f"{cfg.name} seed {seed}: final RPE corrected {m['final_rpe_corrected']:.3f} m, "
                  f"raw {m['final_rpe_raw']:.3f} m; {m['drones_improved']}/{m['n_drones']} drones improved")
        return EXIT_OK
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # anything else is a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
