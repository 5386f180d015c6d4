"""Command line entry point: ``neuacf {prepare,train,evaluate,export-factors,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from neuacf import pipeline
from neuacf.pipeline import RunConfig


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.output is not None:
        changes["output"] = args.output
    if getattr(args, "fusion", None):
        changes["fusion"] = args.fusion
    return cfg.replace(**changes) if changes else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neuacf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--output", help="output directory (overrides config)")
        p.add_argument("--fusion", help="attention | self_attention | average | single:<aspect>")
        return p

    add("prepare", "build the split, HIN and similarity matrices")
    add("train", "train and keep the best checkpoint")
    p = add("evaluate", "HR/NDCG report for a checkpoint")
    p.add_argument("--checkpoint")
    p = add("export-factors", "dump one tower's latent factors")
    p.add_argument("--checkpoint")
    p.add_argument("--side", choices=("user", "item"), required=True)
    p.add_argument("--aspect", required=True)
    p.add_argument("--out", help="destination file")
    add("report", "table of all evaluated runs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        cfg = _config(args)
        if args.command == "prepare":
            manifest = pipeline.cmd_prepare(cfg)
            print(json.dumps({k: manifest[k] for k in ("prepare_hash", "files", "n_test_users")}, indent=1))
        elif args.command == "train":
            summary = pipeline.cmd_train(cfg)
            print(json.dumps(summary["best"]))
        elif args.command == "evaluate":
            pipeline.cmd_evaluate(cfg, args.checkpoint)
            print((cfg.train_dir / "report.txt").read_text(), end="")
        elif args.command == "export-factors":
            print(pipeline.cmd_export_factors(cfg, args.side, args.aspect, args.checkpoint, args.out))
        elif args.command == "report":
            print(pipeline.cmd_report(cfg))
    except (pipeline.StageError, ValueError, KeyError, OSError) as exc:
        print(f"neuacf {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
