"""Command line interface.

Subcommands mirror the pipeline stages: ingest, preprocess, train,
generate, evaluate, analyze.  Every command prints a JSON summary on
stdout; failures print a JSON error record on stderr and exit nonzero,
so wrappers never have to scrape tracebacks.
"""

from __future__ import annotations

import argparse
import json
import sys

from chartgen.charts import ChartError
from chartgen.model import BASELINE, MULTI_SCALE
from chartgen.pipeline import (
    cmd_analyze,
    cmd_evaluate,
    cmd_generate,
    cmd_ingest,
    cmd_preprocess,
    cmd_train,
)
from chartgen.training import TrainingDiverged


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chartgen",
        description="Rhythm-game chart generation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan a dataset tree and write its manifest")
    p.add_argument("root", help="dataset root directory")
    p.add_argument("--manifest", help="manifest output path (default ROOT/manifest.json)")

    p = sub.add_parser("preprocess", help="fill the feature store")
    p.add_argument("--manifest", required=True, help="dataset manifest path")
    p.add_argument("--out", required=True, help="feature store directory")

    p = sub.add_parser("train", help="train a model into a run directory")
    p.add_argument("--manifest", required=True, help="dataset manifest path")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--config", help="key = value training config file")
    p.add_argument(
        "--variant",
        choices=[MULTI_SCALE, BASELINE],
        default=MULTI_SCALE,
        help="model architecture",
    )
    p.add_argument("--seed", type=int, default=0, help="split and training seed")
    p.add_argument("--store", help="feature store directory (optional cache)")

    p = sub.add_parser("generate", help="generate a chart for an audio file")
    p.add_argument("--checkpoint", required=True, help="model checkpoint path")
    p.add_argument("--audio", required=True, help="audio file")
    p.add_argument(
        "--template",
        required=True,
        help="chart JSON supplying the tempo schedule (notes ignored)",
    )
    p.add_argument("--difficulty", required=True, help="difficulty name, e.g. Expert")
    p.add_argument("--threshold", type=float, help="peak threshold (default: stored)")
    p.add_argument("--out", required=True, help="output chart JSON path")

    p = sub.add_parser("evaluate", help="score a run's checkpoint on a split part")
    p.add_argument("run_dir", help="run directory from the train command")
    p.add_argument("--manifest", help="dataset manifest (default: the one trained on)")
    p.add_argument(
        "--split",
        choices=["train", "val", "test"],
        default="test",
        help="split part to score",
    )
    p.add_argument("--threshold", type=float, help="peak threshold (default: stored)")
    p.add_argument("--store", help="feature store directory (optional cache)")
    p.add_argument("--out", help="report output path (default under reports/)")

    p = sub.add_parser(
        "analyze", help="difficulty inclusion matrix and rhythm histograms"
    )
    p.add_argument("--manifest", required=True, help="dataset manifest to analyze")
    p.add_argument(
        "--slots-per-beat",
        type=int,
        default=2,
        help="beat grid resolution (2 = eighth notes)",
    )
    p.add_argument("--out", help="output directory (default: <root>/analysis)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "ingest":
            payload = cmd_ingest(args.root, args.manifest)
        elif args.command == "preprocess":
            payload = cmd_preprocess(args.manifest, args.out)
        elif args.command == "train":
            payload = cmd_train(
                args.manifest,
                args.out,
                config_path=args.config,
                variant=args.variant,
                seed=args.seed,
                store_dir=args.store,
            )
        elif args.command == "generate":
            payload = cmd_generate(
                args.checkpoint,
                args.audio,
                args.template,
                args.difficulty,
                args.out,
                threshold=args.threshold,
            )
        elif args.command == "evaluate":
            payload = cmd_evaluate(
                args.run_dir,
                manifest_path=args.manifest,
                part=args.split,
                threshold=args.threshold,
                out_path=args.out,
                store_dir=args.store,
            )
        else:
            payload = cmd_analyze(
                args.manifest,
                out_dir=args.out,
                slots_per_beat=args.slots_per_beat,
            )
    except (ChartError, TrainingDiverged, OSError) as exc:
        record = {
            "error": type(exc).__name__,
            "message": str(exc),
            "command": args.command,
        }
        print(json.dumps(record), file=sys.stderr)
        return 1
    print(json.dumps(payload, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
