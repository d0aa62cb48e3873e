"""Command line entry point: train / eval / bench / sweep-dep."""

from __future__ import annotations

import argparse
import sys

from .experiment import run_experiment, sweep_dep, timing_benchmark


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uavmc",
        description="Multi-connectivity UAV downlink experiments: training, "
                    "evaluation, DEP-threshold sweeps, and timing benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, algo=True):
        p.add_argument("--config", required=True, help="config file path")
        p.add_argument("--seed", type=int, default=0, help="run seed")
        p.add_argument("--out", required=True, help="output directory")
        if algo:
            p.add_argument("--algo", default=None,
                           choices=["hmappo", "mappo", "opportunistic",
                                    "closest", "random"],
                           help="override experiment.algo from the config")
        if checkpoint:
            p.add_argument("--checkpoint", default=None,
                           help="load trained policies instead of training")

    common(sub.add_parser("train", help="train (if the algorithm learns) "
                                        "then evaluate"))
    common(sub.add_parser("eval", help="evaluate without training"),
           checkpoint=True)
    common(sub.add_parser("bench", help="per-step timing versus AP count"),
           algo=False)
    common(sub.add_parser("sweep-dep", help="evaluate across DEP thresholds"),
           checkpoint=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            paths = run_experiment(args.config, args.seed, args.out,
                                   algo=args.algo)
        elif args.command == "eval":
            paths = run_experiment(args.config, args.seed, args.out,
                                   algo=args.algo,
                                   checkpoint=args.checkpoint,
                                   skip_train=True)
        elif args.command == "bench":
            paths = timing_benchmark(args.config, args.seed, args.out)
        elif args.command == "sweep-dep":
            paths = sweep_dep(args.config, args.seed, args.out,
                              algo=args.algo, checkpoint=args.checkpoint)
        else:  # pragma: no cover - argparse guards this
            raise ValueError(f"unknown command {args.command!r}")
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
