"""Command-line interface.

Subcommands: train, eval, synth, dcor, version. Exit codes: 0 on success,
1 on validation errors (bad config, bad files, shape mismatches), 2 on
numeric aborts (non-finite losses or gradients).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

from . import __version__
from .autodiff import Tensor
from .config import TrainConfig
from .errors import EastError, NumericError, ValidationError
from .losses import dcor
from .store import read_store
from .synthetic import SyntheticSpec, generate_synthetic
from .trainer import Checkpoint, evaluate, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="east",
        description="Train and evaluate students guided by teacher embeddings.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training experiment")
    p_train.add_argument("--config", required=True, help="JSON experiment config")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--store", required=True)
    p_eval.add_argument("--name-map", default=None,
                        help="CSV mapping model labels to evaluation labels")
    p_eval.add_argument("--split", default="test", choices=["train", "valid", "test"])

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--spec", required=True, help="JSON synthetic spec")
    p_synth.add_argument("--out", required=True, help="output directory")

    p_dcor = sub.add_parser("dcor", help="distance correlation of two aligned stores")
    p_dcor.add_argument("--a", required=True)
    p_dcor.add_argument("--b", required=True)

    sub.add_parser("version", help="print the toolkit version")
    return parser


def _read_name_map(path) -> list[tuple[str, str]]:
    pairs: list[tuple[str, str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: name map is empty") from None
        if header != ["model_label", "eval_label"]:
            raise ValidationError(
                f"{path}: name map header must be model_label,eval_label")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 2 fields")
            pairs.append((rec[0], rec[1]))
    if not pairs:
        raise ValidationError(f"{path}: name map has no entries")
    return pairs


def _cmd_train(args) -> int:
    config = TrainConfig.from_json(args.config)
    run_experiment(config)
    return 0


def _cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    name_map = _read_name_map(args.name_map) if args.name_map else None
    report = evaluate(ckpt, args.store, args.manifest, split=args.split,
                      name_map=name_map)
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return 0


def _cmd_synth(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.spec}: invalid JSON: {exc}") from None
    spec = SyntheticSpec.from_dict(raw)
    ds = generate_synthetic(spec, out_dir=args.out)
    print(f"wrote {ds.teacher_path}, {ds.student_path}, {ds.manifest_path}")
    return 0


def _cmd_dcor(args) -> int:
    a, ameta = read_store(args.a)
    b, bmeta = read_store(args.b)
    if ameta.n != bmeta.n:
        raise ValidationError(
            f"stores are not aligned: {ameta.n} rows vs {bmeta.n} rows")
    value = dcor(Tensor(a), Tensor(b)).item()
    print(f"{value:.12f}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "dcor":
            return _cmd_dcor(args)
        if args.command == "version":
            print(f"east {__version__}")
            return 0
        raise ValidationError(f"unknown command {args.command!r}")
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 2
    except (EastError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
