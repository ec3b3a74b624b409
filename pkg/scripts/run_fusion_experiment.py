#!/usr/bin/env python3
"""Train DVS-only, APS-only, and fused models on a prepared corpus.

Expects `<prefix>.train.bin` / `<prefix>.test.bin` from `evdrive prep`
(see make_demo_corpus.py).  Trains the desk preset for each input mode
over several seeds, writes prediction CSVs, and prints the EVA/RMSE
summary table via the pipeline's own `eval` command.

Requires the steer-trainer package (trainer/) to be installed.
"""

import argparse
import subprocess
import sys
from pathlib import Path

import numpy as np


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("prefix", help="dataset prefix (from `evdrive prep --out`) ")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--epochs", type=int, default=8)
    parser.add_argument("--max-samples", type=int, default=6000)
    parser.add_argument("--out", default="fusion_runs", help="output directory")
    args = parser.parse_args()

    from steer_trainer.evaluation import evaluate
    from steer_trainer.models import build_model
    from steer_trainer.training import TrainConfig, train

    train_bin = Path(f"{args.prefix}.train.bin")
    test_bin = Path(f"{args.prefix}.test.bin")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    eval_args = ["eval"]
    evas = {}
    for mode in ("fused", "dvs", "aps"):
        for seed in args.seeds:
            config = TrainConfig(
                input_mode=mode,
                epochs=args.epochs,
                preset="resnet8-desk",
                seed=seed,
                max_samples=args.max_samples,
            )
            result = train(train_bin, config)
            model = build_model(config.preset, mode, seed=seed)
            model.load_state_dict(result.state_dict)
            model.eval()
            pred = out / f"{mode}_s{seed}_pred.csv"
            gt = out / f"{mode}_s{seed}_gt.csv"
            metrics = evaluate(model, test_bin, mode, pred_csv=pred, gt_csv=gt)
            evas.setdefault(mode, []).append(metrics["eva"])
            print(
                f"{mode} seed {seed}: eva {metrics['eva']:.3f} "
                f"rmse {metrics['rmse_deg']:.2f} deg ({result.train_seconds:.0f}s)"
            )
            cli_mode = "dvs+aps" if mode == "fused" else mode
            eval_args += ["--pred", str(pred), "--gt", str(gt), "--mode", cli_mode, "--tag", "all"]

    for mode, values in evas.items():
        print(f"{mode}: EVA {np.mean(values):.3f}+-{np.std(values):.3f} over {len(values)} seeds")
    print("\npipeline eval table:")
    subprocess.run([sys.executable, "-m", "evdrive", *eval_args], check=True)


if __name__ == "__main__":
    main()
