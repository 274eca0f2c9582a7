"""Command-line entry point.

Grammar: ``mgmtn <command> --config <file> [--override key=value ...]``.
Commands: synth, train-seg, train-far, eval, ablate, inspect-activations.
All outputs land under ``--out`` (falling back to the config's ``out`` key)
together with a config echo, the seed, and a manifest of artifact hashes.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="flat key=value config file")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--data", type=Path, default=None, help="dataset directory (data.root)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgmtn",
                                     description="mask-guided multi-task face attribute recognition")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic schematic-face dataset")
    _add_common(p)
    p.add_argument("--n", type=int, default=None, help="shorthand for synth.n")
    p.add_argument("--seed", type=int, default=None, help="shorthand for seed")
    p.add_argument("--attributes", type=str, default=None,
                   help="comma-separated active attributes (synth.attributes)")

    p = sub.add_parser("train-seg", help="train the group-mask segmenter")
    _add_common(p)
    p.add_argument("--resume", type=Path, default=None, help="segmenter checkpoint to resume")

    p = sub.add_parser("train-far", help="train the recognition model (staged)")
    _add_common(p)
    p.add_argument("--stage", choices=("global", "group", "joint"), required=True)
    p.add_argument("--seg", type=Path, default=None, help="segmenter checkpoint")
    p.add_argument("--init", type=Path, default=None, help="previous-stage checkpoint")

    p = sub.add_parser("eval", help="evaluate a recognition checkpoint")
    _add_common(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--seg", type=Path, default=None)
    p.add_argument("--mode", choices=("group", "global"), default="group")

    p = sub.add_parser("ablate", help="run one ablation axis")
    _add_common(p)
    p.add_argument("--axis", choices=("maskscale", "attention", "features"), required=True)
    p.add_argument("--ckpt", type=Path, default=None, help="trained checkpoint (maskscale)")
    p.add_argument("--seg", type=Path, default=None)
    p.add_argument("--global-ckpt", type=Path, default=None,
                   help="shared global-stage checkpoint (attention/features)")

    p = sub.add_parser("inspect-activations", aliases=["inspect"],
                       help="emit per-group max-pool argmax locations and overlays")
    _add_common(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--seg", type=Path, required=True)
    p.add_argument("--samples", type=int, default=4)

    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config, args.override)
    if args.data is not None:
        cfg.data.root = str(args.data)
    if args.out is not None:
        cfg.out = str(args.out)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "n", None) is not None:
        cfg.synth.n = args.n
    if getattr(args, "attributes", None):
        cfg.synth.attributes = tuple(
            t.strip() for t in args.attributes.split(",") if t.strip()
        )
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _load_config(args)
    out = Path(cfg.out)

    if args.command == "synth":
        from .experiments import run_synth

        result = run_synth(cfg, out)
        print(f"wrote {result['n']} samples to {result['out']}")
        return 0

    if args.command == "train-seg":
        from .train import train_segmenter_run

        result = train_segmenter_run(cfg, out, resume=args.resume)
        print(f"segmenter checkpoint: {result['checkpoint']}")
        if result["final_mean_f1"] is not None:
            print(f"held-out mean F1: {result['final_mean_f1']:.4f}")
        return 0

    if args.command == "train-far":
        from .train import train_far_stage_run

        result = train_far_stage_run(cfg, args.stage, out,
                                     seg_ckpt=args.seg, init_ckpt=args.init)
        print(f"{args.stage} checkpoint: {result['checkpoint']}")
        return 0

    if args.command == "eval":
        from .experiments import run_eval

        report = run_eval(cfg, args.ckpt, out, seg_ckpt=args.seg, mode=args.mode)
        print(json.dumps({"accuracy": report["accuracy"], "mA": report["mA"]}, indent=2))
        return 0

    if args.command == "ablate":
        from .experiments import run_ablate

        rows = run_ablate(cfg, args.axis, out, ckpt=args.ckpt, seg_ckpt=args.seg,
                          global_ckpt=args.global_ckpt)
        for row in rows:
            print(json.dumps(row))
        return 0

    if args.command in ("inspect-activations", "inspect"):
        from .experiments import run_inspect

        payload = run_inspect(cfg, args.ckpt, args.seg, out, num_samples=args.samples)
        print(f"inspected {len(payload['samples'])} samples -> {out}")
        return 0

    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
