"""Steering prediction metrics and multi-run aggregation.

Explained variance is 1 - Var(pred - gt) / Var(gt) with population
variances throughout; 1 is perfect, 0 matches the trivial constant
predictor.  Ground truth with zero variance is rejected loudly rather than
returning NaN.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

CSV_HEADER = ("ts_ms", "deg")


class MetricsError(Exception):
    pass


def _as_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise MetricsError(
            f"prediction/ground-truth shape mismatch: {pred.shape} vs {gt.shape}"
        )
    if pred.size == 0:
        raise MetricsError("empty prediction set")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise MetricsError("predictions and ground truth must be finite")
    return pred, gt


def rmse(pred, gt) -> float:
    """Root mean squared prediction error, in degrees."""
    pred, gt = _as_pair(pred, gt)
    return float(np.sqrt(np.mean((pred - gt) ** 2)))


def eva(pred, gt) -> float:
    """Explained variance of the prediction."""
    pred, gt = _as_pair(pred, gt)
    if pred.size < 2:
        raise MetricsError("explained variance needs at least two samples")
    var_gt = float(np.var(gt))
    if var_gt == 0.0:
        raise MetricsError("explained variance undefined for constant ground truth")
    return 1.0 - float(np.var(pred - gt)) / var_gt


@dataclass(frozen=True)
class RunSummary:
    values: tuple[float, ...]
    mean: float
    std: float  # population standard deviation across runs


def summarize_runs(values: Sequence[float]) -> RunSummary:
    """Mean and population standard deviation over experiment repeats."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise MetricsError("no run values to summarize")
    return RunSummary(tuple(float(v) for v in arr), float(arr.mean()), float(arr.std()))


def write_prediction_csv(path, ts_ms: Sequence[int], deg: Sequence[float]) -> None:
    if len(ts_ms) != len(deg):
        raise MetricsError("timestamp and value columns differ in length")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for t, v in zip(ts_ms, deg):
            fh.write(f"{int(t)},{float(v):.9g}\n")


def read_prediction_csv(path) -> tuple[list[int], np.ndarray]:
    """Read a two-column prediction CSV (header ``ts_ms,deg``)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MetricsError(f"{path}: empty CSV") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise MetricsError(f"{path}: expected header 'ts_ms,deg', got {header!r}")
        ts, values = [], []
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise MetricsError(f"{path}: malformed row {row!r}")
            ts.append(int(row[0]))
            values.append(float(row[1]))
    return ts, np.asarray(values, dtype=np.float64)


_TABLE_MODES = ("dvs+aps", "dvs", "aps")


def format_metrics_table(
    cells: dict[str, dict[str, Sequence[tuple[float, float]]]]
) -> str:
    """Render a per-dataset table of RMSE and EVA summaries.

    `cells[tag][mode]` holds (rmse, eva) pairs, one per run.  Cells show
    mean +/- population std over the runs; missing cells show '-'.
    RMSE values are means of per-run RMSEs, not pooled residuals.
    """
    lines = []
    for metric_idx, title in ((0, "RMSE_deg"), (1, "EVA")):
        lines.append(f"# {title} (mean+-std over runs; lower is better)" if metric_idx == 0
                     else f"# {title} (mean+-std over runs; higher is better)")
        header = f"{'dataset':<12}" + "".join(f"{m:>16}" for m in _TABLE_MODES)
        lines.append(header)
        for tag in sorted(cells):
            row = f"{tag:<12}"
            for mode in _TABLE_MODES:
                runs = cells[tag].get(mode)
                if not runs:
                    row += f"{'-':>16}"
                else:
                    summary = summarize_runs([r[metric_idx] for r in runs])
                    row += f"{summary.mean:>10.3f}+-{summary.std:<4.3f}"
            lines.append(row)
    return "\n".join(lines) + "\n"
