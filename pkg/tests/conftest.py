from __future__ import annotations

import numpy as np
import pytest

from evdrive.recording import (
    EVENT_DTYPE,
    ApsFrame,
    RecordingMeta,
    StampedPacket,
    StreamId,
    VehicleChannel,
    VehicleSample,
)


def make_events(coords, width=None, height=None):
    """Build an EVENT_DTYPE array from (x, y, polarity, ts) tuples."""
    arr = np.array(coords, dtype=object)
    out = np.empty(len(coords), dtype=EVENT_DTYPE)
    for i, (x, y, p, t) in enumerate(coords):
        out[i] = (x, y, p, t)
    return out


def random_events(rng, n, width, height, ts_range=(0, 10_000_000)):
    out = np.empty(n, dtype=EVENT_DTYPE)
    out["x"] = rng.integers(0, width, n)
    out["y"] = rng.integers(0, height, n)
    out["polarity"] = rng.choice(np.array([-1, 1], dtype=np.int8), n)
    out["device_ts_us"] = np.sort(rng.integers(ts_range[0], ts_range[1], n))
    return out


def make_aps(width=8, height=6, exposure_us=1000, device_ts_us=0, fill=None, rng=None):
    if fill is not None:
        pixels = np.full((height, width), fill, dtype=np.uint16)
    else:
        rng = rng or np.random.default_rng(0)
        pixels = rng.integers(0, 1024, (height, width)).astype(np.uint16)
    return ApsFrame(width, height, exposure_us, device_ts_us, pixels)


def random_recording(rng, width=8, height=6, n_packets=20, max_events=50):
    """A random but valid (meta, packets) pair for codec round trips."""
    meta = RecordingMeta(
        width=width,
        height=height,
        id=f"rec{rng.integers(1e6)}",
        scenario=rng.choice(["day", "night", ""]),
        created_ms=int(rng.integers(0, 2**40)),
    )
    packets = []
    last_ts = {int(s): 0 for s in StreamId}
    for _ in range(n_packets):
        sid = int(rng.integers(0, 3))
        ts = last_ts[sid] + int(rng.integers(0, 100))
        last_ts[sid] = ts
        if sid == StreamId.DVS:
            n = int(rng.integers(0, max_events + 1))
            payload = random_events(rng, n, width, height)
        elif sid == StreamId.APS:
            payload = make_aps(
                width,
                height,
                exposure_us=int(rng.integers(50, 200_001)),
                device_ts_us=int(rng.integers(0, 2**40)),
                rng=rng,
            )
        else:
            channel = VehicleChannel(int(rng.integers(1, 12)))
            if channel in (
                VehicleChannel.BRAKE_STATUS,
                VehicleChannel.HEADLAMP_STATUS,
                VehicleChannel.WIPER_STATUS,
            ):
                value = float(rng.integers(0, 2))
            elif channel is VehicleChannel.STEERING_WHEEL_ANGLE:
                value = float(rng.uniform(-720, 720))
            elif channel is VehicleChannel.SPEED:
                value = float(rng.uniform(0, 160))
            else:
                value = float(rng.normal(0, 100))
            payload = VehicleSample(channel, value)
        packets.append(StampedPacket(sid, ts, payload))
    return meta, packets


class InMemoryRecording:
    """Recording-like object over an in-memory packet list."""

    def __init__(self, packets, meta=None):
        self._packets = list(packets)
        self.meta = meta

    def packets(self, stream_id=None):
        for p in self._packets:
            if stream_id is None or p.stream_id == stream_id:
                yield p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
