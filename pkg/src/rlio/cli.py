"""Command-line front end: simulate, run, eval, plot, compare."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import EstimatorConfig


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="rlio",
        description="Sliding-window lidar-inertial-ranging odometry toolkit.")
    parser.add_argument("--print-defaults", action="store_true",
                        help="print the default estimator configuration as "
                             "JSON and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--imu-rate", type=float, default=100.0)
    p.add_argument("--uwb-rate", type=float, default=25.0,
                   help="ranging rate per body node, Hz")
    p.add_argument("--sigma-uwb", type=float, default=0.05)
    p.add_argument("--sigma-lidar", type=float, default=0.02)
    p.add_argument("--outlier-rate", type=float, default=0.0)
    p.add_argument("--zero-noise", action="store_true",
                   help="disable all noise sources")
    p.add_argument("--sparse", nargs=2, type=float, action="append",
                   metavar=("T0", "T1"), default=[],
                   help="feature-sparse time window (repeatable)")

    p = sub.add_parser("run", help="run the estimator on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output trajectory CSV")
    p.add_argument("--anchors", type=int, choices=(0, 2, 3), default=3)
    p.add_argument("--mode", choices=("lio", "liro"), default=None,
                   help="'lio' is shorthand for --anchors 0")
    p.add_argument("--window", type=int, default=None,
                   help="sliding window size M")
    p.add_argument("--config", default=None, help="estimator config JSON file")
    p.add_argument("--seed", type=int, default=0,
                   help="accepted for interface uniformity; the estimator "
                        "itself is deterministic")

    p = sub.add_parser("eval", help="compare a trajectory to ground truth")
    p.add_argument("--est", required=True, help="estimated trajectory CSV")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--data", help="dataset directory (uses its ground truth)")
    group.add_argument("--gt", help="reference trajectory CSV")
    p.add_argument("--align", choices=("se3", "none"), default="se3")
    p.add_argument("--out", default=None, help="per-sample error CSV")

    p = sub.add_parser("plot", help="render trajectory and error plots")
    p.add_argument("--est", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--data")
    group.add_argument("--gt")
    p.add_argument("--align", choices=("se3", "none"), default="se3")
    p.add_argument("--out", required=True, help="output directory for SVGs")

    p = sub.add_parser("compare",
                       help="run 0/2/3-anchor modes and tabulate the errors")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--config", default=None)
    return parser


def _load_config(args) -> EstimatorConfig:
    if getattr(args, "config", None):
        config = EstimatorConfig.from_json(Path(args.config).read_text())
    else:
        config = EstimatorConfig()
    if getattr(args, "window", None):
        config.window_size = args.window
    return config


def _load_reference(args):
    from .io import read_dataset, read_trajectory
    if getattr(args, "data", None):
        return read_dataset(args.data).groundtruth
    return read_trajectory(args.gt)


def _cmd_simulate(args) -> int:
    from .io import write_dataset
    from .simulate import (NoiseSpec, ZERO_NOISE, TrajectorySpec,
                           default_world, generate)
    if args.zero_noise:
        noise = ZERO_NOISE
    else:
        noise = NoiseSpec(sigma_uwb=args.sigma_uwb,
                          sigma_lidar=args.sigma_lidar,
                          outlier_rate=args.outlier_rate, seed=args.seed)
    spec = TrajectorySpec(duration=args.duration, imu_rate=args.imu_rate,
                          uwb_rate=args.uwb_rate,
                          sparse_windows=tuple(tuple(w) for w in args.sparse))
    ds = generate(spec, default_world(), noise)
    out = write_dataset(ds, args.out)
    print(f"wrote {len(ds.imu)} IMU samples, {len(ds.uwb)} ranges, "
          f"{len(ds.clouds)} clouds to {out}")
    return 0


def _cmd_run(args) -> int:
    from .io import read_dataset, write_trajectory
    from .pipeline import run_estimator
    anchors = 0 if args.mode == "lio" else args.anchors
    config = _load_config(args)
    ds = read_dataset(args.data)
    result = run_estimator(ds, config, anchor_count=anchors)
    write_trajectory(args.out, result.nodes)
    print(f"estimated {len(result.nodes)} poses "
          f"({anchors} anchors, window {config.window_size}), "
          f"median slide {result.median_slide_ms:.1f} ms, "
          f"{result.n_rejected} ranges rejected -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    from .evaluate import evaluate
    from .io import read_trajectory
    est = read_trajectory(args.est)
    report = evaluate(est, _load_reference(args), alignment=args.align)
    sys.stdout.write(report.to_text())
    if args.out:
        report.write_csv(args.out)
    return 0


def _cmd_plot(args) -> int:
    from .evaluate import evaluate
    from .io import read_trajectory
    from .plots import plot_errors, plot_trajectory
    est = read_trajectory(args.est)
    gt = _load_reference(args)
    report = evaluate(est, gt, alignment=args.align)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plot_trajectory(est, gt, out / "trajectory.svg")
    plot_errors(report, out / "errors.svg")
    print(f"wrote {out / 'trajectory.svg'} and {out / 'errors.svg'}")
    return 0


def _cmd_compare(args) -> int:
    from .evaluate import evaluate
    from .io import read_dataset, write_trajectory
    from .pipeline import run_estimator
    config = _load_config(args)
    ds = read_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(f"{'mode':<8} {'rmse(se3)':>10} {'rmse(raw)':>10} {'rot deg':>8}")
    for label, anchors in (("lio", 0), ("liro2", 2), ("liro3", 3)):
        result = run_estimator(ds, config, anchor_count=anchors)
        write_trajectory(out / f"traj_{label}.csv", result.nodes)
        aligned = evaluate(result.nodes, ds.groundtruth, alignment="se3")
        raw = evaluate(result.nodes, ds.groundtruth, alignment="none")
        print(f"{label:<8} {aligned.rmse_pos:>10.4f} {raw.rmse_pos:>10.4f} "
              f"{raw.rmse_rot_deg:>8.3f}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        print(EstimatorConfig().to_json())
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    handler = {
        "simulate": _cmd_simulate,
        "run": _cmd_run,
        "eval": _cmd_eval,
        "plot": _cmd_plot,
        "compare": _cmd_compare,
    }[args.command]
    try:
        return handler(args)
    except Exception as exc:  # surface a clean one-line failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
