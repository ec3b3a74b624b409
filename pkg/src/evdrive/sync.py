"""Host-clock stream merging and fixed-window record assembly.

All three streams share the recording computer's millisecond clock, so a
k-way merge on (host_ts_ms, stream_id) produces the unified timeline.  The
windower then cuts consecutive half-open windows anchored at the first DVS
packet, pairs each with the most recent APS frame, and attaches steering
and speed labels evaluated at the window end.
"""

from __future__ import annotations

import heapq
from bisect import bisect_left, bisect_right
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np

from .recording import (
    EVENT_DTYPE,
    ApsFrame,
    StampedPacket,
    StreamId,
    VehicleChannel,
)

ZOH = "zoh"
LINEAR = "linear"


@dataclass(frozen=True)
class SyncPolicy:
    label_mode: str = ZOH
    max_label_gap_ms: int = 200
    window_ms: int = 50

    def __post_init__(self):
        if self.label_mode not in (ZOH, LINEAR):
            raise ValueError(f"label_mode must be '{ZOH}' or '{LINEAR}'")
        if self.max_label_gap_ms <= 0:
            raise ValueError("max_label_gap_ms must be positive")
        if self.window_ms <= 0:
            raise ValueError("window_ms must be positive")


@dataclass
class WindowedRecord:
    start_ms: int
    end_ms: int
    events: np.ndarray
    aps: ApsFrame
    steering_deg: float
    speed_kmh: float


def merge_streams(source) -> Iterator[StampedPacket]:
    """Merge a recording's streams into (host_ts_ms, stream_id) order.

    `source` is either a Recording-like object exposing per-stream
    ``packets(stream_id=...)`` iterators (merged lazily, memory bounded by
    one packet per stream) or a plain packet iterable, which is first
    demultiplexed into per-stream queues.
    """
    if hasattr(source, "packets"):
        streams = [source.packets(stream_id=int(sid)) for sid in StreamId]
    else:
        buckets: dict[int, list[StampedPacket]] = {}
        for packet in source:
            buckets.setdefault(packet.stream_id, []).append(packet)
        streams = [iter(buckets[sid]) for sid in sorted(buckets)]
    return heapq.merge(*streams, key=lambda p: (p.host_ts_ms, p.stream_id))


class _TimeSeries:
    """Append-only (ts, value) series with bisect lookups and front pruning."""

    def __init__(self):
        self._ts: list[int] = []
        self._values: list = []
        self._head = 0

    def append(self, ts: int, value) -> None:
        self._ts.append(ts)
        self._values.append(value)

    def latest_at_or_before(self, ts: int) -> Optional[tuple[int, object]]:
        i = bisect_right(self._ts, ts, lo=self._head) - 1
        if i < self._head:
            return None
        return self._ts[i], self._values[i]

    def first_at_or_after(self, ts: int) -> Optional[tuple[int, object]]:
        i = bisect_left(self._ts, ts, lo=self._head)
        if i >= len(self._ts):
            return None
        return self._ts[i], self._values[i]

    def prune_before(self, ts: int) -> None:
        """Drop entries made redundant for lookups at or after `ts`."""
        while self._head + 1 < len(self._ts) and self._ts[self._head + 1] <= ts:
            self._head += 1
        if self._head > 4096:
            del self._ts[: self._head]
            del self._values[: self._head]
            self._head = 0


def _interm(prev: tuple[int, float], nxt: tuple[int, float], end: int) -> float:
    t0, v0 = prev
    t1, v1 = nxt
    if t1 == t0:
        return float(v0)
    return float(v0 + (v1 - v0) * (end - t0) / (t1 - t0))


def window_records(
    merged: Iterable[StampedPacket],
    policy: SyncPolicy = SyncPolicy(),
    counters: Optional[dict] = None,
) -> Iterator[WindowedRecord]:
    """Assemble windowed records from a merged packet stream.

    Windows are half-open [t, t + window_ms) on the host clock, anchored at
    the first DVS packet; a window is emitted only if it contains events.
    Events are assigned by their packet's host stamp.  The paired APS frame
    is the most recent one at or before the window start (so a slow APS
    stream gets duplicated across windows).  Steering and speed labels are
    evaluated at the window end per the policy's label mode; a window with
    no usable APS frame or with labels staler than max_label_gap_ms is
    dropped and counted.
    """
    if counters is None:
        counters = {}
    counters.setdefault("records", 0)
    counters.setdefault("skipped_no_aps", 0)
    counters.setdefault("flagged_label_gap", 0)

    window_ms = policy.window_ms
    linear = policy.label_mode == LINEAR
    t0: Optional[int] = None
    pending: deque[list] = deque()  # [window_idx, list of event chunks]
    aps = _TimeSeries()
    channels = {
        VehicleChannel.STEERING_WHEEL_ANGLE: _TimeSeries(),
        VehicleChannel.SPEED: _TimeSeries(),
    }

    def label_for(series: _TimeSeries, end: int, eof: bool):
        """Returns (value, ready) or flags via None value when unusable."""
        prev = series.latest_at_or_before(end)
        if prev is None:
            return None, True
        if not linear:
            value, gap = prev[1], end - prev[0]
            return (value if gap <= policy.max_label_gap_ms else None), True
        nxt = series.first_at_or_after(end)
        if nxt is None:
            if not eof:
                return None, False  # wait for a bracketing sample
            value, gap = prev[1], end - prev[0]
            return (value if gap <= policy.max_label_gap_ms else None), True
        gap = min(end - prev[0], nxt[0] - end)
        if gap > policy.max_label_gap_ms:
            return None, True
        return _interm(prev, nxt, end), True

    def finalize(cursor: Optional[int], eof: bool) -> Iterator[WindowedRecord]:
        while pending:
            idx, chunks = pending[0]
            start = t0 + idx * window_ms
            end = start + window_ms
            if not eof and cursor <= end:
                return
            steering, ready_a = label_for(
                channels[VehicleChannel.STEERING_WHEEL_ANGLE], end, eof
            )
            speed, ready_b = label_for(channels[VehicleChannel.SPEED], end, eof)
            if not (ready_a and ready_b):
                return
            pending.popleft()
            paired = aps.latest_at_or_before(start)
            if paired is None:
                counters["skipped_no_aps"] += 1
            elif steering is None or speed is None:
                counters["flagged_label_gap"] += 1
            else:
                counters["records"] += 1
                yield WindowedRecord(
                    start_ms=start,
                    end_ms=end,
                    events=chunks[0] if len(chunks) == 1 else np.concatenate(chunks),
                    aps=paired[1],
                    steering_deg=float(steering),
                    speed_kmh=float(speed),
                )
            if pending:
                oldest_start = t0 + pending[0][0] * window_ms
            elif cursor is not None:
                oldest_start = cursor - window_ms
            else:
                continue
            aps.prune_before(oldest_start)
            for series in channels.values():
                series.prune_before(oldest_start)

    for packet in merged:
        ts = packet.host_ts_ms
        if packet.stream_id == StreamId.DVS:
            if t0 is None:
                t0 = ts
            if len(packet.payload):
                idx = (ts - t0) // window_ms
                if pending and pending[-1][0] == idx:
                    pending[-1][1].append(packet.payload)
                else:
                    pending.append([idx, [packet.payload]])
        elif packet.stream_id == StreamId.APS:
            aps.append(ts, packet.payload)
        elif packet.stream_id == StreamId.VEHICLE:
            series = channels.get(packet.payload.channel)
            if series is not None:
                series.append(ts, packet.payload.value)
        yield from finalize(ts, eof=False)

    yield from finalize(None, eof=True)
