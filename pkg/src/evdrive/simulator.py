"""DVS event generation from intensity-frame sequences.

Each pixel memorizes a log-intensity level.  When a new frame moves the
pixel's log intensity by at least one threshold step away from the
memorized level, the pixel emits one event per full step, with timestamps
placed at the linearly interpolated crossing times inside the frame
interval, and the memorized level advances by the emitted step count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .recording import EVENT_DTYPE

# Tolerance (as a fraction of one threshold step) added before flooring the
# step count, so that a change of exactly one threshold fires exactly one
# event despite floating-point rounding in the log computation.
FLOOR_GUARD = 1e-9

ADC_FULL_SCALE = 1023.0


@dataclass(frozen=True)
class SensorParams:
    """DVS model parameters.

    threshold_theta is the log-intensity step per event.  log_eps is the
    additive offset applied before taking logs so black pixels stay finite;
    the default is 1e-3 of the 10-bit full scale.  Noise, refractory
    behavior and per-pixel threshold mismatch are intentionally absent.
    """

    threshold_theta: float = 0.2
    width: int = 346
    height: int = 260
    log_eps: float = 1e-3 * ADC_FULL_SCALE

    def __post_init__(self):
        if self.threshold_theta <= 0:
            raise ValueError("threshold_theta must be positive")
        if self.log_eps <= 0:
            raise ValueError("log_eps must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor dimensions must be positive")


def lin_log(frame: np.ndarray, params: SensorParams) -> np.ndarray:
    """Map intensities to the sensor's log domain."""
    frame = np.asarray(frame, dtype=np.float64)
    if np.any(frame < 0):
        raise ValueError("intensities must be non-negative")
    return np.log(frame + params.log_eps)


def events_from_frames(
    frames: Iterable[tuple[int, np.ndarray]], params: SensorParams
) -> np.ndarray:
    """Generate events from a timed intensity-frame sequence.

    `frames` yields (device_ts_us, intensity image) pairs with strictly
    increasing timestamps and uniform dimensions; at least two frames are
    required.  Frames are consumed one at a time, so the input may be a
    generator of arbitrary length.  Returns an EVENT_DTYPE array sorted by
    (device_ts_us, y, x).
    """
    theta = params.threshold_theta
    it = iter(frames)
    try:
        t_prev, first = next(it)
    except StopIteration:
        raise ValueError("need at least two frames") from None
    first = np.asarray(first, dtype=np.float64)
    if first.ndim != 2:
        raise ValueError("frames must be 2-D intensity arrays")
    if first.shape[0] > 0xFFFF or first.shape[1] > 0xFFFF:
        raise ValueError("frame dimensions exceed event coordinate range")
    shape = first.shape
    mem = lin_log(first, params)

    chunks: list[np.ndarray] = []
    t_prev = int(t_prev)
    n_frames = 1
    for t_cur, frame in it:
        t_cur = int(t_cur)
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != shape:
            raise ValueError(f"frame {n_frames}: shape {frame.shape} != {shape}")
        if t_cur <= t_prev:
            raise ValueError(
                f"frame {n_frames}: timestamp {t_cur} not after {t_prev}"
            )
        log_frame = lin_log(frame, params)
        delta = log_frame - mem
        absd = np.abs(delta)
        counts = np.floor(absd / theta + FLOOR_GUARD).astype(np.int64)
        total = int(counts.sum())
        if total:
            ys, xs = np.nonzero(counts)
            per_pixel = counts[ys, xs]
            sign = np.sign(delta[ys, xs])
            dist = absd[ys, xs]

            starts = np.cumsum(per_pixel) - per_pixel
            step = np.arange(total, dtype=np.int64) - np.repeat(starts, per_pixel) + 1
            frac = step * theta / np.repeat(dist, per_pixel)
            np.minimum(frac, 1.0, out=frac)
            ts = np.rint(t_prev + frac * (t_cur - t_prev)).astype(np.uint64)

            chunk = np.empty(total, dtype=EVENT_DTYPE)
            chunk["x"] = np.repeat(xs, per_pixel).astype(np.uint16)
            chunk["y"] = np.repeat(ys, per_pixel).astype(np.uint16)
            chunk["polarity"] = np.repeat(sign, per_pixel).astype(np.int8)
            chunk["device_ts_us"] = ts
            chunks.append(chunk)

            mem[ys, xs] += sign * per_pixel * theta
        t_prev = t_cur
        n_frames += 1

    if n_frames < 2:
        raise ValueError("need at least two frames")
    if not chunks:
        return np.empty(0, dtype=EVENT_DTYPE)
    events = np.concatenate(chunks)
    order = np.lexsort((events["x"], events["y"], events["device_ts_us"]))
    return events[order]


def reconstruct_log_intensity(
    events: np.ndarray, initial: np.ndarray, params: SensorParams
) -> np.ndarray:
    """Integrate events back into a log-intensity image.

    Each event moves its pixel by polarity * threshold.  This is the exact
    inverse of the generation model and serves as its verification oracle.
    """
    events = np.asarray(events, dtype=EVENT_DTYPE)
    out = np.array(initial, dtype=np.float64, copy=True)
    if out.ndim != 2:
        raise ValueError("initial state must be a 2-D log-intensity image")
    h, w = out.shape
    if events.size:
        xs = events["x"].astype(np.int64)
        ys = events["y"].astype(np.int64)
        bad = (xs >= w) | (ys >= h)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValueError(
                f"event {i} at ({xs[i]}, {ys[i]}) outside {w}x{h} sensor"
            )
        np.add.at(
            out,
            (ys, xs),
            events["polarity"].astype(np.float64) * params.threshold_theta,
        )
    return out
