"""Model evaluation: batched prediction, CSV export, and local metrics.

The RMSE/EVA computed here are an independent implementation of the same
definitions used by the pipeline's ``eval`` command (population variance);
the two are cross-checked against each other in the acceptance tests.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .dataset_io import SampleFile, open_samples


def predict(model, samples: SampleFile, mode: str, batch_size: int = 256) -> np.ndarray:
    model.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            idx = np.arange(start, min(start + batch_size, len(samples)))
            images = torch.from_numpy(samples.images(idx, mode))
            preds.append(model(images).squeeze(1).numpy())
    return np.concatenate(preds).astype(np.float64)


def rmse_deg(pred: np.ndarray, gt: np.ndarray) -> float:
    residual = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return float(np.sqrt(np.mean(residual * residual)))


def explained_variance(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    gt_var = float(np.mean((gt - gt.mean()) ** 2))
    if gt_var == 0.0:
        raise ValueError("explained variance undefined for constant ground truth")
    residual = pred - gt
    res_var = float(np.mean((residual - residual.mean()) ** 2))
    return 1.0 - res_var / gt_var


def write_csv(path, ts_ms, values) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("ts_ms,deg\n")
        for t, v in zip(ts_ms, values):
            fh.write(f"{int(t)},{float(v):.9g}\n")


def evaluate(model, data_path, mode: str, pred_csv=None, gt_csv=None) -> dict:
    """Run a model over a dataset file; optionally emit prediction CSVs.

    Returns rmse_deg, eva, and the sample count.  The CSVs use the window
    end times from the dataset manifest when available, falling back to
    sample indices.
    """
    samples = open_samples(data_path)
    if len(samples) == 0:
        raise ValueError(f"{data_path}: no samples to evaluate")
    preds = predict(model, samples, mode)
    gt = samples.steering.astype(np.float64)
    ts = samples.timestamps()
    if pred_csv is not None:
        write_csv(pred_csv, ts, preds)
    if gt_csv is not None:
        write_csv(gt_csv, ts, gt)
    return {
        "count": len(samples),
        "rmse_deg": rmse_deg(preds, gt),
        "eva": explained_variance(preds, gt),
    }
