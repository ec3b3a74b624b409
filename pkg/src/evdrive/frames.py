"""Windowed events to normalized network-input images.

DVS windows become signed event-count histograms, normalized by a
symmetric 3-sigma clip around zero; APS frames are divided by the 10-bit
full scale.  Both are then reduced to the 172x128 network resolution by a
center crop and 2x2 mean pooling.
"""

from __future__ import annotations

from typing import Union

import numpy as np

from .recording import ApsFrame, EVENT_DTYPE

SENSOR_WIDTH = 346
SENSOR_HEIGHT = 260
NETWORK_WIDTH = 172
NETWORK_HEIGHT = 128

APS_FULL_SCALE = 1023.0


def accumulate_dvs(events: np.ndarray, width: int, height: int) -> np.ndarray:
    """Signed per-pixel event counts: ON adds +1, OFF adds -1.

    Returns an int64 array of shape (height, width).
    """
    events = np.asarray(events, dtype=EVENT_DTYPE)
    if not events.size:
        return np.zeros((height, width), dtype=np.int64)
    xs = events["x"].astype(np.int64)
    ys = events["y"].astype(np.int64)
    bad = (xs >= width) | (ys >= height)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ValueError(
            f"event {i} at ({xs[i]}, {ys[i]}) outside {width}x{height} sensor"
        )
    flat = np.bincount(
        ys * width + xs,
        weights=events["polarity"].astype(np.float64),
        minlength=width * height,
    )
    return flat.astype(np.int64).reshape(height, width)


def normalize_dvs(hist: np.ndarray) -> np.ndarray:
    """Clip a signed histogram at 3 sigma and map it onto [0, 1].

    Sigma is the population standard deviation of this histogram's bins,
    zero-count pixels included.  -3 sigma maps to 0, zero counts to 0.5,
    +3 sigma to 1.  A histogram with zero sigma maps to uniform 0.5.
    """
    hist = np.asarray(hist, dtype=np.float64)
    sigma = float(hist.std())
    if sigma == 0.0:
        return np.full(hist.shape, 0.5)
    clipped = np.clip(hist, -3.0 * sigma, 3.0 * sigma)
    return 0.5 + clipped / (6.0 * sigma)


def normalize_aps(frame: Union[ApsFrame, np.ndarray]) -> np.ndarray:
    """Rescale 10-bit intensity codes onto [0, 1]."""
    pixels = frame.pixels if isinstance(frame, ApsFrame) else frame
    return np.clip(np.asarray(pixels, dtype=np.float64) / APS_FULL_SCALE, 0.0, 1.0)


def downsample(img: np.ndarray) -> np.ndarray:
    """Reduce a 346x260 image to 172x128.

    The 346x260 input is center-cropped to 344x256 (one column off each
    side, two rows top and bottom), then 2x2 mean pooled; this keeps the
    pixel mapping exact.  Other input sizes are rejected.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.shape != (SENSOR_HEIGHT, SENSOR_WIDTH):
        raise ValueError(
            f"downsample expects {SENSOR_HEIGHT}x{SENSOR_WIDTH}, got {img.shape[0]}x{img.shape[1]}"
        )
    crop = img[2 : 2 + 2 * NETWORK_HEIGHT, 1 : 1 + 2 * NETWORK_WIDTH]
    return crop.reshape(NETWORK_HEIGHT, 2, NETWORK_WIDTH, 2).mean(axis=(1, 3))


def write_pgm(img: np.ndarray, path) -> None:
    """Write a [0, 1] image as binary PGM (P5, maxval 255)."""
    img = np.asarray(img, dtype=np.float64)
    codes = np.rint(img * 255.0).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(codes.tobytes())
