"""Command-line interface for the experiment pipeline."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import build_experiment_config
from .errors import ValidationError
from .harness import (
    run_cluster,
    run_dict,
    run_evaluate,
    run_experiment,
    run_generate,
    run_prt,
    run_pretrain,
    run_tl,
)
from .metrics import render_report_text

_SUBCOMMANDS = {
    "generate": "generate the synthetic source/unlabeled/target datasets",
    "pretrain": "train the source model on the source dataset",
    "cluster": "cluster unlabeled projections into pseudo-classes",
    "prt": "representation-only transfer per grid cell (classifier frozen)",
    "tl": "conventional transfer per grid cell",
    "dict": "build per-cell feature dictionaries for the fused method",
    "evaluate": "score every configured cell and write the reports",
    "run-all": "run the whole pipeline end to end",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pretext-transfer",
        description="Representation transfer experiments on synthetic two-domain data.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in _SUBCOMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", type=Path, default=None, help="experiment config file (key = value lines)")
        sub.add_argument("--seed", type=int, default=None, help="master seed override")
        sub.add_argument("--out", type=Path, default=None, help="output directory override")
        sub.add_argument("--ratios", type=str, default=None, help="comma-separated imbalance ratios override")
        sub.add_argument("--folds", type=int, default=None, help="fold count override")
    return parser


_DISPATCH = {
    "generate": run_generate,
    "pretrain": run_pretrain,
    "cluster": run_cluster,
    "prt": run_prt,
    "tl": run_tl,
    "dict": run_dict,
    "evaluate": run_evaluate,
    "run-all": run_experiment,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return exc.code if isinstance(exc.code, int) else 2
    try:
        ratios = None
        if args.ratios is not None:
            ratios = tuple(int(part) for part in args.ratios.split(",") if part.strip())
        cfg = build_experiment_config(
            config_path=args.config, seed=args.seed, out=args.out,
            ratios=ratios, folds=args.folds,
        )
        result = _DISPATCH[args.command](cfg)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command in ("evaluate", "run-all"):
        print(render_report_text(result), end="")
        print(f"report written to {cfg.out_dir / 'report.csv'} and {cfg.out_dir / 'report.txt'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
