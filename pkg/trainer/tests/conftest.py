from __future__ import annotations

import struct
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from steer_trainer.dataset_io import IMAGE_HEIGHT, IMAGE_WIDTH

HEADER = struct.Struct("<4sHI6x")


def write_sample_file(path, steering, speed, dvs, aps, window_end_ms=None):
    """Hand-encode a DDSM dataset file (and manifest) for tests."""
    path = Path(path)
    n = len(steering)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(b"DDSM", 1, n))
        for i in range(n):
            fh.write(struct.pack("<ff", float(steering[i]), float(speed[i])))
            fh.write(np.ascontiguousarray(dvs[i], dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(aps[i], dtype="<f4").tobytes())
    if window_end_ms is not None:
        manifest = path.parent / (path.name + ".manifest")
        ts = ",".join(str(int(t)) for t in window_end_ms)
        manifest.write_text(f"format=DDSM\ncount={n}\nwindow_end_ms={ts}\n")
    return path


def synthetic_dataset(path, n, rng, label_sigma=10.0, signal=True, window_end_ms=None):
    """Random dataset whose images optionally encode the steering label.

    With signal=True a bright vertical bar is placed at a column position
    proportional to the label in both modalities, so a small network can
    actually regress it.
    """
    steering = rng.normal(0.0, label_sigma, n).astype(np.float32)
    speed = rng.uniform(20.0, 90.0, n).astype(np.float32)
    dvs = rng.random((n, IMAGE_HEIGHT, IMAGE_WIDTH)).astype(np.float32) * 0.2 + 0.4
    aps = rng.random((n, IMAGE_HEIGHT, IMAGE_WIDTH)).astype(np.float32) * 0.2 + 0.4
    if signal:
        span = 4.0 * label_sigma
        for i in range(n):
            col = int((steering[i] / span + 0.5) * (IMAGE_WIDTH - 8))
            col = min(max(col, 0), IMAGE_WIDTH - 8)
            dvs[i, :, col : col + 6] = 1.0
            aps[i, :, col : col + 6] = 1.0
    return write_sample_file(path, steering, speed, dvs, aps, window_end_ms)


def run_primary_cli(*argv):
    """Invoke the pipeline CLI through its installed module entry point."""
    proc = subprocess.run(
        [sys.executable, "-m", "evdrive", *map(str, argv)],
        capture_output=True,
        text=True,
    )
    return proc


def parse_kv(text):
    out = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if sep:
            out[key] = value
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(2718)
