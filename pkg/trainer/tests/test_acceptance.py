"""Secondary acceptance suite.

Criteria: the desk preset overfits one 128-sample batch to RMSE < 1 degree
within 200 steps (< 5 min); on a 20-minute synthetic corpus with mixed
curvature and two lighting levels, the fused model's mean EVA over 3 seeds
is within 0.02 of (or above) the best single modality, all under 45 min;
and the trainer's metrics agree with the pipeline CLI within 1e-6 relative.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from conftest import parse_kv, run_primary_cli, synthetic_dataset
from steer_trainer.evaluation import evaluate
from steer_trainer.models import build_model
from steer_trainer.training import TrainConfig, train


def _report(name, detail):
    print(f"ACCEPTANCE {name}: PASS ({detail})")


def _fit(data_path, mode, seed, epochs, max_samples=0, batch_size=128):
    config = TrainConfig(
        input_mode=mode,
        epochs=epochs,
        batch_size=batch_size,
        preset="resnet8-desk",
        seed=seed,
        max_samples=max_samples,
    )
    result = train(data_path, config)
    model = build_model(config.preset, config.input_mode, seed=config.seed)
    model.load_state_dict(result.state_dict)
    model.eval()
    return model, result


def test_single_batch_overfit_under_one_degree(tmp_path, rng):
    t0 = time.perf_counter()
    data = synthetic_dataset(tmp_path / "batch.bin", 128, rng, signal=False)
    # one batch of 128, one step per epoch: 200 steps total
    model, result = _fit(data, "fused", seed=0, epochs=200)
    metrics = evaluate(model, data, "fused")
    elapsed = time.perf_counter() - t0
    assert metrics["rmse_deg"] < 1.0
    assert metrics["eva"] > 0.99
    assert elapsed < 300.0
    _report(
        "single-batch-overfit",
        f"rmse {metrics['rmse_deg']:.3f} deg, eva {metrics['eva']:.4f} "
        f"after 200 steps in {elapsed:.0f}s",
    )


def test_metrics_agree_with_primary_cli(tmp_path, rng):
    data = synthetic_dataset(
        tmp_path / "d.bin", 96, rng, window_end_ms=range(50, 50 * 97, 50)
    )
    model, _ = _fit(data, "dvs", seed=1, epochs=2)
    pred_csv = tmp_path / "pred.csv"
    gt_csv = tmp_path / "gt.csv"
    local = evaluate(model, data, "dvs", pred_csv=pred_csv, gt_csv=gt_csv)

    proc = run_primary_cli("eval", "--pred", pred_csv, "--gt", gt_csv)
    assert proc.returncode == 0, proc.stderr
    kv = parse_kv(proc.stdout)
    for ours, theirs_key in ((local["rmse_deg"], "pair0.rmse_deg"), (local["eva"], "pair0.eva")):
        theirs = float(kv[theirs_key])
        rel = abs(ours - theirs) / max(abs(ours), abs(theirs), 1e-12)
        assert rel < 1e-6, f"{theirs_key}: {ours} vs {theirs} (rel {rel:.2e})"
    _report("metric-agreement", "trainer vs pipeline CLI within 1e-6 relative")


_DAY = 0.85
_NIGHT = 0.012

_SCENARIOS = {
    "day_sweep": (
        _DAY, 201,
        "0:0,20:0.005,45:0,70:-0.0065,95:0,120:0.0035,150:0",
        "0:65,150:95",
    ),
    "day_winding": (
        _DAY, 202,
        "0:0.002,35:-0.0055,75:0.0075,115:-0.003,150:0.001",
        "0:50,80:110,150:70",
    ),
    "day_straight": (
        _DAY, 203,
        "0:0,40:0.0015,80:-0.0015,120:0.0005,150:0",
        "0:85,150:85",
    ),
    "day_mountain": (
        _DAY, 204,
        "0:-0.008,35:0.008,70:-0.004,105:0.006,150:-0.002",
        "0:45,150:70",
    ),
    "night_sweep": (
        _NIGHT, 205,
        "0:0,25:0.006,55:-0.006,85:0.0025,115:-0.0045,150:0",
        "0:60,150:90",
    ),
    "night_winding": (
        _NIGHT, 206,
        "0:0.004,40:-0.0075,85:0.0055,150:0",
        "0:55,75:100,150:65",
    ),
    "night_straight": (
        _NIGHT, 207,
        "0:0,50:0.001,100:-0.001,150:0",
        "0:75,150:75",
    ),
    "night_stopgo": (
        _NIGHT, 208,
        "0:-0.007,30:0.0045,65:-0.0035,100:0.008,135:-0.0025,150:0",
        "0:60,70:12,85:12,100:60,150:80",
    ),
}


def _write_corpus(root: Path) -> tuple[Path, Path]:
    containers = []
    for name, (lighting, seed, curvature, speed) in _SCENARIOS.items():
        tag = "night" if lighting < 0.5 else "day"
        cfg = root / f"{name}.cfg"
        cfg.write_text(
            f"duration_s=150\nseed={seed}\nlighting={lighting}\n"
            f"curvature={curvature}\nspeed={speed}\n"
            f"tag={tag}\nid={name}\ncurvature_noise_amp=0.0008\n"
        )
        out = root / f"{name}.ddrc"
        proc = run_primary_cli("simulate", "--scenario", cfg, "--out", out)
        assert proc.returncode == 0, proc.stderr
        containers.append(out)
    proc = run_primary_cli("prep", *containers, "--out", root / "corpus", "--seed", "5")
    assert proc.returncode == 0, proc.stderr
    summary = parse_kv(proc.stdout)
    assert int(summary["train.count"]) > 4000
    assert int(summary["test.count"]) > 2000
    assert int(summary["train.dropped_low_speed"]) + int(summary["test.dropped_low_speed"]) > 0
    return root / "corpus.train.bin", root / "corpus.test.bin"


def test_fusion_trend_on_twenty_minute_corpus(tmp_path_factory):
    t_start = time.perf_counter()
    root = tmp_path_factory.mktemp("fusion_corpus")
    train_bin, test_bin = _write_corpus(root)

    seeds = (0, 1, 2)
    evas: dict[str, list[float]] = {}
    rmses: dict[str, list[float]] = {}
    for mode in ("fused", "dvs", "aps"):
        for seed in seeds:
            model, result = _fit(
                train_bin, mode, seed=seed, epochs=8, max_samples=6000
            )
            metrics = evaluate(model, test_bin, mode)
            evas.setdefault(mode, []).append(metrics["eva"])
            rmses.setdefault(mode, []).append(metrics["rmse_deg"])
            print(
                f"  {mode} seed {seed}: eva {metrics['eva']:.3f} "
                f"rmse {metrics['rmse_deg']:.2f} deg "
                f"(train {result.train_seconds:.0f}s, final mse {result.loss_curve[-1]:.2f})"
            )

    means = {mode: float(np.mean(v)) for mode, v in evas.items()}
    stds = {mode: float(np.std(v)) for mode, v in evas.items()}
    for mode in ("fused", "dvs", "aps"):
        print(
            f"  {mode}: EVA {means[mode]:.3f}+-{stds[mode]:.3f} "
            f"RMSE {np.mean(rmses[mode]):.2f}+-{np.std(rmses[mode]):.2f} deg"
        )
    elapsed = time.perf_counter() - t_start
    best_single = max(means["dvs"], means["aps"])
    assert means["fused"] >= best_single - 0.02, (
        f"fused EVA {means['fused']:.3f} below best single {best_single:.3f} - 0.02"
    )
    assert elapsed < 45 * 60
    _report(
        "fusion-trend",
        f"fused {means['fused']:.3f} vs best single {best_single:.3f} "
        f"over {len(seeds)} seeds in {elapsed/60:.1f} min",
    )
