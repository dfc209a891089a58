"""Command-line entry point: ``simulate``, ``run``, ``eval`` and ``bench``.

Exit codes: 0 success, 1 I/O or unexpected errors, 2 input contract
violations (bad config, malformed or events-only dataset), 3 tracking
hard failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import bench, io
from .dataset import InputContractError, SimulationConfig, load_dataset, simulate, write_dataset
from .metrics import AssociationError, DegenerateAlignment, Trajectory, evaluate
from .pipeline import PipelineConfig, TrackingFailure, run_pipeline

EXIT_OK, EXIT_ERROR, EXIT_CONTRACT, EXIT_TRACKING = 0, 1, 2, 3

log = logging.getLogger("stereo_evio")


def cmd_simulate(args):
    cfg = SimulationConfig.from_file(args.config, seed=args.seed, duration=args.duration)
    t0 = time.perf_counter()
    ds = simulate(cfg)
    out = write_dataset(args.output, ds, cfg)
    print(f"wrote {out}: {len(ds.events_left)} left / {len(ds.events_right)} right events, "
          f"{len(ds.imu)} IMU samples in {time.perf_counter() - t0:.1f} s")
    return EXIT_OK


def cmd_run(args):
    overrides = {"seed": args.seed}
    if args.no_backend:
        overrides["backend"] = False
    cfg = PipelineConfig.from_file(args.config, **overrides)
    ds = load_dataset(args.dataset)
    t0 = time.perf_counter()
    res = run_pipeline(ds, cfg, args.output, single_thread=args.single_thread)
    print(f"tracked {len(res.stamps)} poses ({res.lost_ticks} bridged by the IMU, "
          f"{res.dropped_frames} stale frames dropped) in {time.perf_counter() - t0:.1f} s")
    if ds.groundtruth is not None and len(ds.groundtruth[0]) >= 3:
        report = evaluate(Trajectory.from_tum(res.stamps, res.poses),
                          Trajectory.from_tum(*ds.groundtruth))
        print(report.text(), end="")
        Path(args.output, "metrics.txt").write_text(report.text())
        Path(args.output, "metrics.csv").write_text(report.csv())
    return EXIT_OK


def cmd_eval(args):
    est = Trajectory.from_tum(*io.read_tum(args.estimate))
    gt = Trajectory.from_tum(*io.read_tum(args.groundtruth))
    report = evaluate(est, gt, delta=args.delta, max_dt=args.max_dt)
    print(report.text(), end="")
    out = Path(args.output) if args.output else Path(args.estimate).parent
    io.ensure_dir(out)
    (out / "metrics.txt").write_text(report.text())
    (out / "metrics.csv").write_text(report.csv())
    return EXIT_OK


def cmd_bench(args):
    _, text = bench.report(args.kind, reps=args.reps, seed=args.seed or 0)
    print(text, end="")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="stereo-evio",
                                description="Stereo event-based visual-inertial odometry")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress messages")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value settings file")
        sp.add_argument("--seed", type=int, help="random seed (non-negative)")

    sp = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(sp)
    sp.add_argument("output", help="dataset directory to write")
    sp.add_argument("--duration", type=float, help="override the simulated duration (s)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("run", help="estimate the trajectory of a dataset")
    common(sp)
    sp.add_argument("dataset", help="dataset directory")
    sp.add_argument("output", help="directory for trajectory, depth maps and diagnostics")
    sp.add_argument("--single-thread", action="store_true",
                    help="run the stages in lockstep (reproducible)")
    sp.add_argument("--no-backend", action="store_true", help="disable the sliding-window back-end")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("eval", help="ATE/ARE and RPE of an estimate against ground truth")
    sp.add_argument("estimate", help="TUM trajectory")
    sp.add_argument("groundtruth", help="TUM trajectory")
    sp.add_argument("--output", help="directory for metrics.txt/metrics.csv")
    sp.add_argument("--delta", type=float, default=1.0, help="RPE horizon (s)")
    sp.add_argument("--max-dt", type=float, default=0.01, help="association tolerance (s)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="timing of core kernels")
    sp.add_argument("kind", choices=sorted(bench.BENCHMARKS))
    sp.add_argument("--reps", type=int, default=bench.MIN_REPS)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONTRACT
    try:
        return args.func(args)
    except InputContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (AssociationError, DegenerateAlignment) as exc:
        print(f"error: cannot evaluate: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except TrackingFailure as exc:
        print(f"error: tracking failed: {exc}", file=sys.stderr)
        return EXIT_TRACKING
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
