"""Command-line entry point.

Subcommands: train, eval, retrieve, robust, corrupt, trace, synth, params.
Exit code 0 on success; on failure a single machine-parsable line
``error: <Type>: <message>`` goes to stderr and the exit code is 1. The
``POINTFORMER_WORKERS`` environment variable sets the evaluation worker
count; everything else lives in the config file or flags.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness
from .checkpoint import load_checkpoint
from .corruptions import KINDS, build_robustness_suite, corrupt_dataset, export_suite
from .data import PointCloud, normalize_unit_sphere
from .io import load_dataset, read_cloud, write_dataset
from .model import count_parameters
from .synthetic import generate_synthetic_roofs


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointformer",
        description="train, evaluate, and probe the attention-only point cloud model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a `key = value` config file")
    p.add_argument("--config", required=True)

    p = sub.add_parser("eval", help="classification accuracy on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("retrieve", help="retrieval MAP of queries against an index")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--index-data", required=True)
    p.add_argument("--query-data", required=True)
    p.add_argument(
        "--keep-self",
        action="store_true",
        help="do not exclude index entries whose id matches the query",
    )

    p = sub.add_parser("robust", help="accuracy table over the corruption suite")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--export-dir", help="also export the suite as binary clouds")

    p = sub.add_parser("corrupt", help="write one corrupted copy of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", required=True, choices=sorted(KINDS))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("trace", help="export attention/group/aggregation tables")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cloud", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="generate the synthetic roof dataset")
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--points", type=int, default=1024)
    p.add_argument("--split", default="train")

    p = sub.add_parser("params", help="parameter accounting for a checkpoint")
    p.add_argument("--ckpt", required=True)
    return parser


def _run(args) -> int:
    if args.command == "train":
        config = harness.parse_train_config(args.config)
        result = harness.train(config, log=print)
        print(result.report.to_text())
        print(f"checkpoint: {result.checkpoint_path}")
    elif args.command == "eval":
        params, config = load_checkpoint(args.ckpt)
        res = harness.evaluate(params, config, load_dataset(args.data))
        print(f"accuracy {res.accuracy:.4f} over {res.n_samples} samples")
        for name, acc in res.per_class.items():
            print(f"  class {name}: {acc:.4f}")
    elif args.command == "retrieve":
        params, config = load_checkpoint(args.ckpt)
        index = harness.build_retrieval_index(params, config, load_dataset(args.index_data))
        queries = harness.build_retrieval_index(params, config, load_dataset(args.query_data))
        score = harness.retrieve_and_score(
            index, queries, exclude_matching_id=not args.keep_self
        )
        print(f"MAP {score.mean_ap:.4f} over {len(score.average_precisions)} queries")
    elif args.command == "robust":
        params, config = load_checkpoint(args.ckpt)
        dataset = load_dataset(args.data)
        report = harness.run_robustness(params, config, dataset, seed=args.seed)
        print(report.to_text())
        if args.export_dir:
            export_suite(build_robustness_suite(dataset, args.seed), args.export_dir)
            print(f"suite exported to {args.export_dir}")
    elif args.command == "corrupt":
        dataset = load_dataset(args.data)
        corrupted = corrupt_dataset(dataset, args.kind, args.seed)
        manifest = write_dataset(corrupted, args.out)
        print(f"wrote {len(corrupted)} clouds: {manifest}")
    elif args.command == "trace":
        params, config = load_checkpoint(args.ckpt)
        pc = normalize_unit_sphere(PointCloud(read_cloud(args.cloud), id=Path(args.cloud).stem))
        out = harness.export_trace(params, config, pc, args.out)
        print(f"trace written to {out}")
    elif args.command == "synth":
        dataset = generate_synthetic_roofs(
            args.per_class,
            noise_sigma=args.noise,
            seed=args.seed,
            n_points=args.points,
            split=args.split,
        )
        manifest = write_dataset(dataset, args.out)
        print(f"wrote {len(dataset)} clouds: {manifest}")
    elif args.command == "params":
        params, _ = load_checkpoint(args.ckpt)
        print(count_parameters(params).as_text())
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _run(args)
    except Exception as exc:  # single-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
