"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline as pl
from .config import ConfigError, PipelineConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (defaults are used for missing keys)")
    common.add_argument("--seed", type=int, help="overrides trajectory, oracle and training seeds")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads for per-view stages")
    common.add_argument("--no-entropy", action="store_true", help="drop the entropy channel from features")
    common.add_argument("--no-embedding", action="store_true", help="drop the embedding channels from features")
    common.add_argument("--no-field", action="store_true", help="use raw per-view oracle maps instead of a field")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ncdfield", description="Novel class discovery in a neural field.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="render the RGB-D dataset and oracle embeddings")
    t = sub.add_parser("train", parents=[common], help="fit the neural field")
    t.add_argument("--resume", action="store_true", help="continue from the existing checkpoint")
    sub.add_parser("render", parents=[common], help="render embedding, entropy and depth maps")
    sub.add_parser("segment", parents=[common], help="geometric segmentation of the dataset depth maps")
    sub.add_parser("pipeline", parents=[common], help="run every stage and write metrics")
    sub.add_parser("eval", parents=[common], help="score existing label maps")
    sub.add_parser("print-config", parents=[common], help="print the effective configuration")
    return p


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.set_seed(args.seed)
    if args.out:
        cfg.out = args.out
    if args.threads is not None:
        cfg.threads = args.threads
    if args.no_entropy:
        cfg.ablation.use_entropy = False
    if args.no_embedding:
        cfg.ablation.use_embedding = False
    if args.no_field:
        cfg.ablation.use_field = False
    cfg.validate()
    return cfg


def run(args) -> None:
    cfg = resolve_config(args)
    if args.command == "print-config":
        sys.stdout.write(cfg.dumps())
        return
    scene = pl.prepare(cfg)
    pl.write_config(cfg)
    if args.command == "synth":
        path = pl.stage_synth(cfg, scene)
    elif args.command == "train":
        path = pl.stage_train(cfg, resume=args.resume)
    elif args.command == "render":
        path = pl.stage_render(cfg)
    elif args.command == "segment":
        path = pl.stage_segment(cfg)
    elif args.command == "eval":
        path = pl.stage_eval(cfg)
    else:
        path = pl.run_pipeline(cfg)
    print(path)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pl.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # pragma: no cover - last-resort reporting
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
