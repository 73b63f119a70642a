"""Command-line harness.

Subcommands mirror the pipeline stages:

    thbench preprocess --manifest data.json --config run.yaml
    thbench train      --manifest data.json --config run.yaml --target lipreading
    thbench eval       --manifest data.json --config run.yaml
    thbench report     --records out/reports/report.json --output out/reports2
    thbench features   --manifest data.json --config run.yaml --checkpoint out/checkpoints/emotion.pt
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import load_config
from .manifest import load_manifest


def _add_common(parser: argparse.ArgumentParser, needs_manifest: bool = True):
    if needs_manifest:
        parser.add_argument("--manifest", required=True, type=Path, help="dataset manifest JSON")
    parser.add_argument("--config", type=Path, default=None, help="run configuration YAML")
    parser.add_argument("--output-dir", type=Path, default=None, help="override the configured output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")
    parser.add_argument("--workers", type=int, default=None, help="override the worker count")


def _config_from(args) -> "BenchConfig":
    cfg = load_config(args.config)
    if args.output_dir is not None:
        cfg.output_dir = args.output_dir
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thbench",
        description="Benchmark harness for talking-head video generation evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="track, crop, and pose-estimate every manifest entry")
    _add_common(p)

    p = sub.add_parser("train", help="train a task network (lipreading, emotion, blink)")
    _add_common(p)
    p.add_argument("--target", required=True, choices=["lipreading", "emotion", "blink"])
    p.add_argument("--head", default="softmax", choices=["softmax", "arcloss"])
    p.add_argument("--warm-start", type=Path, default=None,
                   help="softmax checkpoint to initialize an arcloss refinement from")

    p = sub.add_parser("eval", help="run all enabled metrics over the paired clips")
    _add_common(p)
    p.add_argument("--split", default="test")

    p = sub.add_parser("report", help="re-aggregate a report from its per-video records")
    p.add_argument("--records", required=True, type=Path, help="existing report.json")
    p.add_argument("--output", required=True, type=Path, help="directory for the re-aggregated report")

    p = sub.add_parser("features", help="export clip features from a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--split", default="test")
    p.add_argument("--out", type=Path, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "report":
        from ..report import BinSpec, aggregate, write_report

        raw = json.loads(args.records.read_text())
        prov = raw.get("provenance", {})
        motion = prov.get("motion_bins")
        pose = prov.get("pose_bins")
        report = aggregate(
            raw["records"],
            motion_spec=BinSpec(axis=motion["axis"], edges=tuple(motion["edges"])) if motion else None,
            pose_spec=BinSpec(axis=pose["axis"], edges=tuple(pose["edges"])) if pose else None,
            provenance=prov,
            failures=raw.get("failures", []),
        )
        path = write_report(report, args.output)
        print(path)
        return 0

    config = _config_from(args)
    manifest = load_manifest(args.manifest)

    if args.command == "preprocess":
        from .pipeline import run_preprocess

        statuses = run_preprocess(manifest, config)
        counts = {}
        for status in statuses:
            counts[status["status"]] = counts.get(status["status"], 0) + 1
        print(json.dumps(counts, sort_keys=True))
        return 0 if counts.get("failed", 0) == 0 else 1

    if args.command == "train":
        from .pipeline import run_train

        path, run = run_train(manifest, config, args.target, head=args.head,
                              warm_start=args.warm_start)
        print(json.dumps({
            "checkpoint": str(path),
            "final_train_accuracy": run.final_train_accuracy,
            "final_val_accuracy": run.final_val_accuracy,
        }, sort_keys=True))
        return 0

    if args.command == "eval":
        from .pipeline import run_eval

        report = run_eval(manifest, config, split=args.split)
        summary = {method: {metric: stats["mean"] for metric, stats in metrics.items()}
                   for method, metrics in report.per_method.items()}
        print(json.dumps({"methods": summary, "failures": len(report.failures)},
                         sort_keys=True, indent=1))
        return 0 if not report.failures else 1

    if args.command == "features":
        from .pipeline import export_features

        path = export_features(manifest, config, args.checkpoint,
                               split=args.split, out_path=args.out)
        print(path)
        return 0

    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
