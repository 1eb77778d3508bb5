"""Command-line front end: calibrate / detect-eval / train / eval."""

from __future__ import annotations

import argparse
import sys

from .config import BASELINES, ExperimentConfig, config_hash, load_config
from .harness import emit_report, run_scenario


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--baseline", type=str, default=None, choices=BASELINES)
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--checkpoint", type=str, default=None, help="policy checkpoint path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pegassembly",
        description="Desk-scale synthetic peg-in-hole assembly experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("calibrate", "embodied sample collection, map fitting, semi-automatic labeling"),
        ("detect-eval", "pose-estimation accuracy across detector noise levels"),
        ("train", "classroom residual training with the adaptive error curriculum"),
        ("eval", "semi-structured evaluation of a baseline or the full pipeline"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        if name == "train":
            p.add_argument("--episodes", type=int, default=None)
    return parser


def config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    cfg.scenario = args.command
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trials is not None:
        cfg.trials = args.trials
    if args.baseline is not None:
        cfg.baseline = args.baseline
    if args.out is not None:
        cfg.out = args.out
    if args.checkpoint is not None:
        cfg.checkpoint = args.checkpoint
    if getattr(args, "episodes", None) is not None:
        cfg.episodes = args.episodes
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = config_from_args(args)
    print(f"[pegassembly] scenario={cfg.scenario} baseline={cfg.baseline} seed={cfg.seed} "
          f"config_hash={config_hash(cfg)}")
    summary_rows, records = run_scenario(cfg)
    paths = emit_report(summary_rows, records, cfg.out, cfg)
    for row in summary_rows:
        print(f"  {row['metric']:32s} {row['value']}")
    print(f"[pegassembly] wrote {paths['summary']} and {paths['episodes']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
