"""Training loop: Adam on MSE over minibatches of exported samples."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .dataset_io import INPUT_MODES, SampleFile, open_samples
from .models import PRESETS, build_model, channels_for_mode, parameter_count

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    input_mode: str = "fused"  # dvs | aps | fused
    epochs: int = 200  # desk-scale experiments override this down to ~30
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    preset: str = "resnet32"
    seed: int = 0
    max_samples: int = 0  # 0 = use the whole file; otherwise a seeded subset

    def __post_init__(self):
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}")
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {PRESETS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


_CONFIG_FIELDS = {
    "input_mode": str,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "weight_decay": float,
    "preset": str,
    "seed": int,
    "max_samples": int,
}


def parse_config(text: str) -> TrainConfig:
    """Parse a key=value config file mirroring TrainConfig."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _CONFIG_FIELDS:
            raise ValueError(f"config line {lineno}: unknown or malformed entry {line!r}")
        values[key] = _CONFIG_FIELDS[key](value.strip())
    return TrainConfig(**values)


@dataclass
class TrainResult:
    config: TrainConfig
    state_dict: dict
    loss_curve: list[float]  # mean training MSE (deg^2) per epoch
    parameter_count: int
    train_seconds: float


def _select_indices(n: int, config: TrainConfig) -> np.ndarray:
    if config.max_samples and config.max_samples < n:
        rng = np.random.default_rng(config.seed)
        return np.sort(rng.choice(n, size=config.max_samples, replace=False))
    return np.arange(n)


def train(data_path, config: TrainConfig) -> TrainResult:
    """Train a steering regressor on an exported dataset file.

    Deterministic per config seed on CPU: the seed fixes the weight
    initialization, the optional subset choice, and the shuffle order.
    """
    samples = open_samples(data_path)
    if len(samples) == 0:
        raise ValueError(f"{data_path}: no samples to train on")
    indices = _select_indices(len(samples), config)
    labels = samples.steering[indices].astype(np.float32)

    model = build_model(config.preset, config.input_mode, seed=config.seed)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    shuffler = torch.Generator().manual_seed(config.seed)

    t_start = time.perf_counter()
    loss_curve = []
    model.train()
    for epoch in range(config.epochs):
        order = torch.randperm(len(indices), generator=shuffler).numpy()
        epoch_sse = 0.0
        for start in range(0, len(order), config.batch_size):
            pos = np.sort(order[start : start + config.batch_size])
            batch_idx = indices[pos]
            images = torch.from_numpy(samples.images(batch_idx, config.input_mode))
            target = torch.from_numpy(labels[pos])
            optimizer.zero_grad()
            pred = model(images).squeeze(1)
            loss = F.mse_loss(pred, target)
            loss.backward()
            optimizer.step()
            epoch_sse += float(loss.item()) * len(batch_idx)
        loss_curve.append(epoch_sse / len(order))
        logger.info("epoch %d: train mse %.4f deg^2", epoch, loss_curve[-1])

    return TrainResult(
        config=config,
        state_dict={k: v.clone() for k, v in model.state_dict().items()},
        loss_curve=loss_curve,
        parameter_count=parameter_count(model),
        train_seconds=time.perf_counter() - t_start,
    )


def save_result(result: TrainResult, path) -> None:
    torch.save(
        {
            "config": result.config.__dict__,
            "state_dict": result.state_dict,
            "loss_curve": result.loss_curve,
        },
        path,
    )


def load_model(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = TrainConfig(**payload["config"])
    model = build_model(config.preset, config.input_mode, seed=config.seed)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, config
