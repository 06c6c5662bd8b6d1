"""Command-line entry point.

Subcommands cover the whole pipeline: synth, pretrain, extract,
finetune, eval, generate. Configuration comes from an optional JSON file
of flat dotted keys plus --set overrides; a handful of common knobs have
dedicated flags. Exit codes: 0 success, 2 config error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, RunConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssdl",
        description="Diffusion-pretrained state-space latents: pipeline commands",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file with flat dotted keys")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )
        p.add_argument("--seed", type=int, help="master random seed")
        p.add_argument("--out-dir", help="run output directory")
        p.add_argument("--data-dir", help="dataset directory")
        p.add_argument("--threads", type=int, help="cap torch worker threads")

    p = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    common(p)
    p.add_argument("--imbalance", help="class ratio like 10:1:1")
    p.add_argument("--n-per-class", type=int)

    p = sub.add_parser("pretrain", help="diffusion-pretrain the backbone")
    common(p)
    p.add_argument("--schedule", choices=["cosine", "linear"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", help="checkpoint directory to continue from")

    p = sub.add_parser("extract", help="extract pooled latent activities")
    common(p)
    p.add_argument("--tap", choices=["gate", "filter"])
    p.add_argument("--pool", choices=["std", "avg", "average"])
    p.add_argument("--mode", choices=["none", "noiseless"])
    p.add_argument("--step", type=int)
    p.add_argument("--backbone", help="backbone checkpoint directory")

    p = sub.add_parser("finetune", help="train the latent fusion classifier")
    common(p)
    p.add_argument("--tap", choices=["gate", "filter"])
    p.add_argument("--pool", choices=["std", "avg", "average"])
    p.add_argument("--mode", choices=["none", "noiseless"])
    p.add_argument("--step", type=int)
    p.add_argument(
        "--layers",
        help="layer subset: all, first-half, second-half, q1..q4, or comma list",
    )
    p.add_argument("--fusion", choices=["base", "none", "mean"])
    p.add_argument("--class-weights", action="store_true")
    p.add_argument("--seeds", type=int, help="number of fine-tuning seeds")

    p = sub.add_parser("eval", help="evaluate a trained classifier")
    common(p)
    p.add_argument("--split", choices=["train", "valid", "test"])
    p.add_argument("--resample-test", type=float, metavar="HZ", help="evaluate at a different sampling rate")
    p.add_argument("--lft", help="fine-tuned checkpoint directory")
    p.add_argument("--backbone", help="backbone checkpoint directory")

    p = sub.add_parser("generate", help="sample signals from the backbone")
    common(p)
    p.add_argument("--count", type=int)
    p.add_argument("--backbone", help="backbone checkpoint directory")
    return parser


_FLAG_KEYS = {
    "seed": "seed",
    "out_dir": "out.dir",
    "data_dir": "data.dir",
    "threads": "threads",
    "imbalance": "synth.imbalance",
    "n_per_class": "synth.n_per_class",
    "schedule": "diffusion.schedule",
    "epochs": "pretrain.epochs",
    "tap": "extract.tap",
    "pool": "extract.pool",
    "mode": "extract.mode",
    "step": "extract.step",
    "layers": "lft.layers",
    "fusion": "lft.fusion",
    "seeds": "finetune.seeds",
    "split": "eval.split",
    "resample_test": "eval.resample_rate",
    "count": "generate.count",
}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = list(args.overrides)
    for attr, key in _FLAG_KEYS.items():
        val = getattr(args, attr, None)
        if val is not None:
            overrides.append(f"{key}={json.dumps(val) if not isinstance(val, str) else val}")
    if getattr(args, "class_weights", False):
        overrides.append("finetune.class_weights=true")
    return RunConfig.from_sources(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    from . import pipeline

    try:
        if args.command == "synth":
            manifest = pipeline.run_synth(cfg)
            print(json.dumps({"dataset": str(manifest.root), "histogram": manifest.class_histogram}))
        elif args.command == "pretrain":
            resume = Path(args.resume) if args.resume else None
            path = pipeline.run_pretrain(cfg, resume=resume)
            print(json.dumps({"checkpoint": str(path)}))
        elif args.command == "extract":
            backbone = Path(args.backbone) if args.backbone else None
            path = pipeline.run_extract(cfg, backbone_ckpt=backbone)
            print(json.dumps({"latents": str(path)}))
        elif args.command == "finetune":
            summary = pipeline.run_finetune(cfg)
            print(json.dumps({"mean": summary["mean"], "std": summary["std"]}))
        elif args.command == "eval":
            lft = Path(args.lft) if args.lft else None
            backbone = Path(args.backbone) if args.backbone else None
            report = pipeline.run_eval(cfg, lft_ckpt=lft, backbone_ckpt=backbone)
            print(json.dumps({k: report[k] for k in ("kappa", "bacc", "wf1", "split", "sample_rate")}))
        elif args.command == "generate":
            backbone = Path(args.backbone) if args.backbone else None
            path = pipeline.run_generate(cfg, backbone_ckpt=backbone)
            print(json.dumps({"generated": str(path)}))
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, KeyError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
