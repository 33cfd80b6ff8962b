"""Command-line entry point: ``ectnet {synth,preprocess,train,embed,invariance}``.

Exit status is 0 on success, 1 for invalid input or configuration and 2 for
file-system errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .complex import ComplexError, MeshParseError
from .config import ConfigError, ExperimentConfig, run_config
from .nn import ShapeError
from . import pipeline as pl

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def _config(args) -> ExperimentConfig:
    cfg = run_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.level is not None:
        overrides["level"] = args.level
    if args.resolution is not None:
        overrides["resolution"] = args.resolution
    if args.seed is not None:
        overrides["seed"] = args.seed
    return replace(cfg, **overrides) if overrides else cfg


def _need(args, name):
    value = getattr(args, name)
    if value is None:
        raise ConfigError(name, f"--{name} is required for '{args.command}'")
    return value


def cmd_synth(args, cfg):
    out = Path(_need(args, "out"))
    m = pl.synth_dataset(out, cfg.classes, cfg.per_class_train, cfg.deform_seed,
                         per_class_eval=cfg.per_class_eval, mesh_level=cfg.mesh_level)
    print(f"wrote {len(m.entries)} meshes and {out / 'manifest.json'}")


def cmd_preprocess(args, cfg):
    m = pl.DatasetManifest.load(_need(args, "manifest"))
    out = Path(_need(args, "out"))
    written = pl.preprocess_ect(m, cfg, out)
    print(f"wrote {len(written)} ECT files to {out}")


def _ect_dir(args) -> Path:
    return Path(args.ect_dir) if args.ect_dir else Path(args.manifest).parent / "ect"


def cmd_train(args, cfg):
    m = pl.DatasetManifest.load(_need(args, "manifest"))
    m.validate(per_class_train=cfg.per_class_train)
    out = Path(_need(args, "out"))
    res = pl.train_model(m, cfg, _ect_dir(args), out)
    print(f"final train loss {pl.fmt(res.final_loss)}")
    print(f"checkpoint {out / 'model.ectw'}")


def cmd_embed(args, cfg):
    m = pl.DatasetManifest.load(_need(args, "manifest"))
    out = _need(args, "out")
    rows = pl.embed_meshes(m, _need(args, "checkpoint"), cfg, _ect_dir(args), out_csv=out)
    print(f"wrote {len(rows)} embeddings to {out}")


def cmd_invariance(args, cfg):
    m = pl.DatasetManifest.load(_need(args, "manifest"))
    out = _need(args, "out")
    checkpoint = args.checkpoint
    if cfg.invariance_mode == "reuse":
        checkpoint = _need(args, "checkpoint")
    res = pl.invariance_error_analysis(m, checkpoint, cfg, ect_dir=_ect_dir(args),
                                       identity=args.identity, out_csv=out)
    print(json.dumps({"invariance_error": res.error, "per_repeat": res.per_repeat}))


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train,
            "embed": cmd_embed, "invariance": cmd_invariance}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ectnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--out", help="output directory or CSV file")
        p.add_argument("--manifest", help="dataset manifest.json")
        p.add_argument("--checkpoint", help="model checkpoint (.ectw)")
        p.add_argument("--level", type=int, help="icosphere level for the directions")
        p.add_argument("--resolution", type=int, help="samples per Euler curve")
        p.add_argument("--seed", type=int, help="training seed")
        p.add_argument("--ect-dir", help="ECT files (default: <manifest dir>/ect)")
        if name == "invariance":
            p.add_argument("--identity", action="store_true",
                           help="use identity transforms (sanity check, error must be 0)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, pl.PipelineError, ShapeError, ComplexError, MeshParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
