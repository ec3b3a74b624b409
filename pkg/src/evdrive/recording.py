"""Recording data model and the flat chunked binary container codec.

A recording is a header followed by a sequence of stamped records, one per
packet.  Every integer in the container is little-endian:

* header: magic ``DDRC`` | version u16 | meta length u32 | meta bytes,
  where meta is UTF-8 ``key=value`` lines (width, height, id, scenario,
  created_ms, in that order)
* record: stream_id u8 | host_ts_ms u64 | payload_len u32 | payload
* DVS payload: count u16, then count x (x u16 | y u16 | polarity i8 |
  device_ts_us u64)
* APS payload: width u16 | height u16 | exposure_us u32 | device_ts_us u64 |
  width*height u16 pixels, row-major
* VEHICLE payload: channel u8 (1-indexed) | value f64
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import BinaryIO, Iterable, Iterator, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"DDRC"
VERSION = 1

_HEADER_FIXED = struct.Struct("<4sHI")
_RECORD_HEADER = struct.Struct("<BQI")
_APS_FIXED = struct.Struct("<HHIQ")
_VEHICLE_PAYLOAD = struct.Struct("<Bd")

# Packed on-disk event encoding; itemsize is exactly 13 bytes.
EVENT_DTYPE = np.dtype(
    [("x", "<u2"), ("y", "<u2"), ("polarity", "i1"), ("device_ts_us", "<u8")]
)
EVENT_SIZE = EVENT_DTYPE.itemsize

# Larger event bursts are split across several records by the writer.
MAX_EVENTS_PER_BATCH = 0xFFFF
MAX_PAYLOAD_BYTES = 0xFFFFFFFF


class StreamId(IntEnum):
    DVS = 0
    APS = 1
    VEHICLE = 2


class VehicleChannel(IntEnum):
    """Vehicle bus fields, numbered as printed in the source table."""

    ACCELERATOR_PEDAL = 1
    BRAKE_STATUS = 2
    ENGINE_RPM = 3
    HEADLAMP_STATUS = 4
    LATITUDE = 5
    LONGITUDE = 6
    ODOMETER = 7
    STEERING_WHEEL_ANGLE = 8
    GEAR = 9
    SPEED = 10
    WIPER_STATUS = 11


_BINARY_CHANNELS = frozenset(
    {
        VehicleChannel.BRAKE_STATUS,
        VehicleChannel.HEADLAMP_STATUS,
        VehicleChannel.WIPER_STATUS,
    }
)


class RecordingError(Exception):
    """Base class for container failures."""


class UnsupportedFormatError(RecordingError):
    pass


class OutOfOrderPacketError(RecordingError):
    def __init__(self, index: int, stream_id: int, ts: int, prev_ts: int):
        self.index = index
        super().__init__(
            f"packet {index}: host_ts_ms {ts} < {prev_ts} on stream {stream_id}"
        )


class PayloadTooLargeError(RecordingError):
    pass


class TruncatedRecordingError(RecordingError):
    def __init__(self, offset: int, detail: str):
        self.offset = offset
        super().__init__(f"truncated record at byte offset {offset}: {detail}")


class CorruptRecordError(RecordingError):
    def __init__(self, offset: int, detail: str):
        self.offset = offset
        super().__init__(f"corrupt record at byte offset {offset}: {detail}")


@dataclass(frozen=True)
class Event:
    """One brightness-change event."""

    x: int
    y: int
    polarity: int
    device_ts_us: int

    def __post_init__(self):
        if self.polarity not in (-1, 1):
            raise ValueError(f"polarity must be +1 or -1, got {self.polarity}")
        if self.x < 0 or self.y < 0:
            raise ValueError("event coordinates must be non-negative")


def events_to_array(events: Iterable[Event]) -> np.ndarray:
    out = np.array(
        [(e.x, e.y, e.polarity, e.device_ts_us) for e in events], dtype=EVENT_DTYPE
    )
    return out if out.size else np.empty(0, dtype=EVENT_DTYPE)


@dataclass
class ApsFrame:
    """Grayscale intensity frame; 10-bit ADC values stored in 16 bits."""

    width: int
    height: int
    exposure_us: int
    device_ts_us: int
    pixels: np.ndarray  # uint16, shape (height, width)

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint16)
        if self.pixels.shape != (self.height, self.width):
            raise ValueError(
                f"pixels shape {self.pixels.shape} != (height={self.height}, width={self.width})"
            )

    def __eq__(self, other):
        if not isinstance(other, ApsFrame):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.exposure_us == other.exposure_us
            and self.device_ts_us == other.device_ts_us
            and np.array_equal(self.pixels, other.pixels)
        )


@dataclass(frozen=True)
class VehicleSample:
    """One telemetry reading from the vehicle bus."""

    channel: VehicleChannel
    value: float

    def __post_init__(self):
        ch = VehicleChannel(self.channel)
        object.__setattr__(self, "channel", ch)
        v = float(self.value)
        if ch is VehicleChannel.STEERING_WHEEL_ANGLE and not -720.0 <= v <= 720.0:
            raise ValueError(f"steering wheel angle {v} outside [-720, 720]")
        if ch is VehicleChannel.SPEED and not 0.0 <= v <= 160.0:
            raise ValueError(f"speed {v} outside [0, 160]")
        if ch in _BINARY_CHANNELS and v not in (0.0, 1.0):
            raise ValueError(f"binary channel {ch.name} must be 0 or 1, got {v}")


Payload = Union[np.ndarray, ApsFrame, VehicleSample]


@dataclass
class StampedPacket:
    """One record on the recording timeline, stamped with host-clock ms."""

    stream_id: int
    host_ts_ms: int
    payload: Payload

    def __eq__(self, other):
        if not isinstance(other, StampedPacket):
            return NotImplemented
        if self.stream_id != other.stream_id or self.host_ts_ms != other.host_ts_ms:
            return False
        if isinstance(self.payload, np.ndarray):
            return isinstance(other.payload, np.ndarray) and np.array_equal(
                self.payload, other.payload
            )
        return self.payload == other.payload


def dvs_packet(host_ts_ms: int, events: np.ndarray) -> StampedPacket:
    return StampedPacket(StreamId.DVS, host_ts_ms, np.asarray(events, dtype=EVENT_DTYPE))


def aps_packet(host_ts_ms: int, frame: ApsFrame) -> StampedPacket:
    return StampedPacket(StreamId.APS, host_ts_ms, frame)


def vehicle_packet(host_ts_ms: int, sample: VehicleSample) -> StampedPacket:
    return StampedPacket(StreamId.VEHICLE, host_ts_ms, sample)


@dataclass(frozen=True)
class RecordingMeta:
    width: int
    height: int
    id: str = "recording"
    scenario: str = ""
    created_ms: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor dimensions must be positive")
        for name in ("id", "scenario"):
            if "\n" in getattr(self, name):
                raise ValueError(f"meta field {name!r} must not contain newlines")


def _encode_meta(meta: RecordingMeta) -> bytes:
    lines = (
        f"width={meta.width}\n"
        f"height={meta.height}\n"
        f"id={meta.id}\n"
        f"scenario={meta.scenario}\n"
        f"created_ms={meta.created_ms}\n"
    )
    return lines.encode("utf-8")


def _decode_meta(blob: bytes) -> RecordingMeta:
    fields = {}
    for line in blob.decode("utf-8").splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UnsupportedFormatError(f"malformed meta line: {line!r}")
        fields[key] = value
    try:
        return RecordingMeta(
            width=int(fields["width"]),
            height=int(fields["height"]),
            id=fields.get("id", ""),
            scenario=fields.get("scenario", ""),
            created_ms=int(fields.get("created_ms", "0")),
        )
    except (KeyError, ValueError) as exc:
        raise UnsupportedFormatError(f"bad recording meta: {exc}") from exc


def _encode_dvs_payload(events: np.ndarray) -> bytes:
    return struct.pack("<H", len(events)) + events.tobytes()


def _validate_events(events: np.ndarray, meta: RecordingMeta, index: int) -> np.ndarray:
    events = np.asarray(events, dtype=EVENT_DTYPE)
    if events.size:
        if int(events["x"].max()) >= meta.width or int(events["y"].max()) >= meta.height:
            raise ValueError(
                f"packet {index}: event outside {meta.width}x{meta.height} sensor"
            )
        pol = events["polarity"]
        if not np.all((pol == 1) | (pol == -1)):
            raise ValueError(f"packet {index}: polarity must be +1 or -1")
    return events


def _encode_payload(packet: StampedPacket, meta: RecordingMeta, index: int) -> list[bytes]:
    """Encode one packet, splitting oversized event bursts."""
    sid = packet.stream_id
    if sid == StreamId.DVS:
        events = _validate_events(packet.payload, meta, index)
        chunks = []
        for start in range(0, max(len(events), 1), MAX_EVENTS_PER_BATCH):
            chunk = events[start : start + MAX_EVENTS_PER_BATCH]
            chunks.append(_encode_dvs_payload(chunk))
        return chunks
    if sid == StreamId.APS:
        frame: ApsFrame = packet.payload
        if frame.width > 0xFFFF or frame.height > 0xFFFF:
            raise PayloadTooLargeError(
                f"packet {index}: frame dimensions exceed u16 range"
            )
        fixed = _APS_FIXED.pack(
            frame.width, frame.height, frame.exposure_us, frame.device_ts_us
        )
        payload = fixed + frame.pixels.astype("<u2", copy=False).tobytes()
        if len(payload) > MAX_PAYLOAD_BYTES:
            raise PayloadTooLargeError(f"packet {index}: APS payload too large")
        return [payload]
    if sid == StreamId.VEHICLE:
        sample: VehicleSample = packet.payload
        return [_VEHICLE_PAYLOAD.pack(int(sample.channel), float(sample.value))]
    raise ValueError(f"packet {index}: unknown stream_id {sid}")


def write_recording(
    meta: RecordingMeta, packets: Iterable[StampedPacket], sink: BinaryIO
) -> int:
    """Serialize a recording; returns the number of bytes written.

    Packets must be ordered by host_ts_ms within each stream.  DVS batches
    longer than 65535 events are split across consecutive records with the
    same host stamp.
    """
    meta_bytes = _encode_meta(meta)
    written = sink.write(MAGIC)
    written += sink.write(struct.pack("<HI", VERSION, len(meta_bytes)))
    written += sink.write(meta_bytes)

    last_ts: dict[int, int] = {}
    for index, packet in enumerate(packets):
        ts = int(packet.host_ts_ms)
        if ts < 0:
            raise ValueError(f"packet {index}: negative host_ts_ms")
        prev = last_ts.get(packet.stream_id)
        if prev is not None and ts < prev:
            raise OutOfOrderPacketError(index, packet.stream_id, ts, prev)
        last_ts[packet.stream_id] = ts
        for payload in _encode_payload(packet, meta, index):
            written += sink.write(_RECORD_HEADER.pack(packet.stream_id, ts, len(payload)))
            written += sink.write(payload)
    return written


def _decode_dvs(payload: bytes, offset: int) -> np.ndarray:
    if len(payload) < 2:
        raise CorruptRecordError(offset, "DVS payload shorter than count field")
    (count,) = struct.unpack_from("<H", payload)
    expected = 2 + count * EVENT_SIZE
    if len(payload) != expected:
        raise CorruptRecordError(
            offset, f"DVS payload length {len(payload)} != {expected} for {count} events"
        )
    return np.frombuffer(payload, dtype=EVENT_DTYPE, count=count, offset=2).copy()


def _decode_aps(payload: bytes, offset: int) -> ApsFrame:
    if len(payload) < _APS_FIXED.size:
        raise CorruptRecordError(offset, "APS payload shorter than fixed fields")
    width, height, exposure_us, device_ts_us = _APS_FIXED.unpack_from(payload)
    expected = _APS_FIXED.size + 2 * width * height
    if len(payload) != expected:
        raise CorruptRecordError(
            offset, f"APS payload length {len(payload)} != {expected} for {width}x{height}"
        )
    pixels = (
        np.frombuffer(payload, dtype="<u2", count=width * height, offset=_APS_FIXED.size)
        .reshape(height, width)
        .copy()
    )
    return ApsFrame(width, height, exposure_us, device_ts_us, pixels)


def _decode_vehicle(payload: bytes, offset: int) -> VehicleSample:
    if len(payload) != _VEHICLE_PAYLOAD.size:
        raise CorruptRecordError(
            offset, f"VEHICLE payload length {len(payload)} != {_VEHICLE_PAYLOAD.size}"
        )
    channel, value = _VEHICLE_PAYLOAD.unpack(payload)
    try:
        return VehicleSample(VehicleChannel(channel), value)
    except ValueError as exc:
        raise CorruptRecordError(offset, f"bad vehicle sample: {exc}") from exc


def _read_exact(source: BinaryIO, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = source.read(n - len(buf))
        if not chunk:
            return buf
        buf += chunk
    return buf


def open_recording(
    source: BinaryIO,
) -> tuple[RecordingMeta, Iterator[StampedPacket]]:
    """Parse the header and return (meta, lazy packet iterator).

    The iterator holds at most one record in memory.  Records with an
    unknown stream id are skipped with a warning.  A file that ends in the
    middle of a record yields every complete packet first, then raises
    TruncatedRecordingError carrying the offending byte offset.
    """
    head = _read_exact(source, _HEADER_FIXED.size)
    if len(head) < _HEADER_FIXED.size:
        raise UnsupportedFormatError("file shorter than container header")
    magic, version, meta_len = _HEADER_FIXED.unpack(head)
    if magic != MAGIC:
        raise UnsupportedFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedFormatError(f"unsupported container version {version}")
    meta_bytes = _read_exact(source, meta_len)
    if len(meta_bytes) < meta_len:
        raise UnsupportedFormatError("file shorter than declared meta block")
    meta = _decode_meta(meta_bytes)
    data_start = _HEADER_FIXED.size + meta_len

    def packet_iter() -> Iterator[StampedPacket]:
        offset = data_start
        while True:
            header = _read_exact(source, _RECORD_HEADER.size)
            if not header:
                return
            if len(header) < _RECORD_HEADER.size:
                raise TruncatedRecordingError(offset, "partial record header")
            stream_id, host_ts_ms, payload_len = _RECORD_HEADER.unpack(header)
            payload = _read_exact(source, payload_len)
            if len(payload) < payload_len:
                raise TruncatedRecordingError(
                    offset, f"payload cut short ({len(payload)}/{payload_len} bytes)"
                )
            if stream_id == StreamId.DVS:
                packet = StampedPacket(stream_id, host_ts_ms, _decode_dvs(payload, offset))
            elif stream_id == StreamId.APS:
                packet = StampedPacket(stream_id, host_ts_ms, _decode_aps(payload, offset))
            elif stream_id == StreamId.VEHICLE:
                packet = StampedPacket(
                    stream_id, host_ts_ms, _decode_vehicle(payload, offset)
                )
            else:
                logger.warning(
                    "skipping record with unknown stream_id=%d at offset %d",
                    stream_id,
                    offset,
                )
                packet = None
            offset += _RECORD_HEADER.size + payload_len
            if packet is not None:
                yield packet

    return meta, packet_iter()


class Recording:
    """Path-backed recording supporting independent packet iterations."""

    def __init__(self, path):
        self.path = path
        with open(path, "rb") as fh:
            self.meta, _ = open_recording(fh)

    def packets(self, stream_id: Optional[int] = None) -> Iterator[StampedPacket]:
        """Fresh lazy iterator over the file, optionally filtered to one stream."""
        fh = open(self.path, "rb")
        try:
            _, packets = open_recording(fh)
            for packet in packets:
                if stream_id is None or packet.stream_id == stream_id:
                    yield packet
        finally:
            fh.close()


def stream_stats(packets: Iterable[StampedPacket]) -> dict:
    """Per-stream packet counts, host-time spans, and mean rates.

    The mean rate is interval-based, (count-1)/span; it is absent for
    streams with fewer than two packets or zero span.  DVS entries also
    carry the total event count, VEHICLE entries per-channel counts.
    """
    stats: dict = {}
    for sid in StreamId:
        stats[sid.name] = {"count": 0}
    stats[StreamId.DVS.name]["events"] = 0
    stats[StreamId.VEHICLE.name]["channels"] = {}

    for packet in packets:
        try:
            name = StreamId(packet.stream_id).name
        except ValueError:
            name = f"STREAM_{packet.stream_id}"
            stats.setdefault(name, {"count": 0})
        entry = stats[name]
        entry["count"] += 1
        ts = packet.host_ts_ms
        entry["first_host_ts_ms"] = min(entry.get("first_host_ts_ms", ts), ts)
        entry["last_host_ts_ms"] = max(entry.get("last_host_ts_ms", ts), ts)
        if packet.stream_id == StreamId.DVS:
            entry["events"] += len(packet.payload)
        elif packet.stream_id == StreamId.VEHICLE:
            ch = packet.payload.channel.name.lower()
            entry["channels"][ch] = entry["channels"].get(ch, 0) + 1

    for entry in stats.values():
        count = entry["count"]
        if count >= 2:
            span_ms = entry["last_host_ts_ms"] - entry["first_host_ts_ms"]
            entry["span_ms"] = span_ms
            if span_ms > 0:
                entry["rate_hz"] = (count - 1) / (span_ms / 1000.0)
    return stats


def format_stream_stats(stats: dict) -> str:
    """Render stream_stats as stable key=value lines."""
    lines = []
    for name in sorted(stats):
        entry = stats[name]
        prefix = name.lower()
        lines.append(f"{prefix}.count={entry['count']}")
        for key in ("first_host_ts_ms", "last_host_ts_ms", "span_ms"):
            if key in entry:
                lines.append(f"{prefix}.{key}={entry[key]}")
        if "rate_hz" in entry:
            lines.append(f"{prefix}.rate_hz={entry['rate_hz']:.6g}")
        if "events" in entry:
            lines.append(f"{prefix}.events={entry['events']}")
        for ch, n in sorted(entry.get("channels", {}).items()):
            lines.append(f"{prefix}.channel.{ch}.count={n}")
    return "\n".join(lines) + "\n"
