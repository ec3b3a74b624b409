"""Command line front end: train a model, evaluate it, emit prediction CSVs."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .dataset_io import DatasetFormatError
from .evaluation import evaluate
from .training import TrainConfig, load_model, parse_config, save_result, train


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="steer-trainer", description="Steering regression on exported DVS/APS datasets."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a model on a dataset file")
    tr.add_argument("--data", required=True, help="training dataset (.bin)")
    tr.add_argument("--out", required=True, help="output model checkpoint (.pt)")
    tr.add_argument("--config", default=None, help="key=value config file")
    tr.add_argument("--mode", choices=("dvs", "aps", "fused"), default=None)
    tr.add_argument("--preset", choices=("resnet32", "resnet8-desk"), default=None)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--max-samples", type=int, default=None)

    ev = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset file")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--pred-out", default=None, help="prediction CSV path")
    ev.add_argument("--gt-out", default=None, help="ground-truth CSV path")
    return parser


def _cmd_train(args) -> int:
    if args.config:
        config = parse_config(Path(args.config).read_text(encoding="utf-8"))
    else:
        config = TrainConfig()
    overrides = {}
    if args.mode is not None:
        overrides["input_mode"] = args.mode
    if args.preset is not None:
        overrides["preset"] = args.preset
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.max_samples is not None:
        overrides["max_samples"] = args.max_samples
    if overrides:
        config = TrainConfig(**{**config.__dict__, **overrides})

    result = train(args.data, config)
    save_result(result, args.out)
    print(f"model={args.out}")
    print(f"parameters={result.parameter_count}")
    print(f"epochs={len(result.loss_curve)}")
    print(f"final_train_mse={result.loss_curve[-1]:.9g}")
    print(f"train_seconds={result.train_seconds:.1f}")
    return 0


def _cmd_evaluate(args) -> int:
    model, config = load_model(args.model)
    metrics = evaluate(
        model, args.data, config.input_mode, pred_csv=args.pred_out, gt_csv=args.gt_out
    )
    print(f"mode={config.input_mode}")
    print(f"count={metrics['count']}")
    print(f"rmse_deg={metrics['rmse_deg']:.9g}")
    print(f"eva={metrics['eva']:.9g}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        return _cmd_evaluate(args)
    except (DatasetFormatError, ValueError, OSError) as exc:
        print(f"steer-trainer {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
