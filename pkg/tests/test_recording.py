import io
import logging
import struct
import tracemalloc

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import InMemoryRecording, make_aps, make_events, random_events, random_recording
from evdrive.recording import (
    EVENT_DTYPE,
    EVENT_SIZE,
    MAX_EVENTS_PER_BATCH,
    ApsFrame,
    OutOfOrderPacketError,
    Recording,
    RecordingMeta,
    StampedPacket,
    StreamId,
    TruncatedRecordingError,
    UnsupportedFormatError,
    VehicleChannel,
    VehicleSample,
    dvs_packet,
    open_recording,
    stream_stats,
    write_recording,
)


def roundtrip(meta, packets):
    buf = io.BytesIO()
    write_recording(meta, packets, buf)
    buf.seek(0)
    meta2, it = open_recording(buf)
    return meta2, list(it), buf.getvalue()


def test_empty_recording_roundtrip():
    meta = RecordingMeta(width=8, height=6, id="r", scenario="", created_ms=0)
    meta2, packets, blob = roundtrip(meta, [])
    assert meta2 == meta
    assert packets == []
    # header only: magic + version + meta length field + meta bytes
    assert len(blob) == 4 + 2 + 4 + len("width=8\nheight=6\nid=r\nscenario=\ncreated_ms=0\n")


def test_single_dvs_batch_byte_length():
    meta = RecordingMeta(width=8, height=6, id="r", scenario="", created_ms=0)
    events = make_events([(1, 2, 1, 10), (3, 4, -1, 20), (5, 5, 1, 30)])
    buf = io.BytesIO()
    written = write_recording(meta, [dvs_packet(7, events)], buf)

    meta_len = len("width=8\nheight=6\nid=r\nscenario=\ncreated_ms=0\n")
    header = 4 + 2 + 4 + meta_len
    record_framing = 1 + 8 + 4
    payload = 2 + 3 * EVENT_SIZE
    assert EVENT_SIZE == 13
    assert written == header + record_framing + payload
    assert len(buf.getvalue()) == written


def test_out_of_order_within_stream_names_index():
    meta = RecordingMeta(width=8, height=6)
    packets = [
        dvs_packet(100, make_events([(0, 0, 1, 1)])),
        dvs_packet(50, make_events([(0, 0, 1, 2)])),
    ]
    with pytest.raises(OutOfOrderPacketError) as err:
        write_recording(meta, packets, io.BytesIO())
    assert err.value.index == 1
    assert "1" in str(err.value)


def test_interleaved_streams_may_cross_in_time():
    # ordering is per-stream, so a later DVS packet may precede an earlier APS one
    meta = RecordingMeta(width=8, height=6)
    packets = [
        dvs_packet(100, make_events([(0, 0, 1, 1)])),
        StampedPacket(StreamId.APS, 50, make_aps()),
        dvs_packet(100, make_events([(1, 1, -1, 2)])),
    ]
    _, out, _ = roundtrip(meta, packets)
    assert len(out) == 3


def test_roundtrip_preserves_all_payload_types(rng):
    meta, packets = random_recording(rng, n_packets=30)
    meta2, out, blob = roundtrip(meta, packets)
    assert meta2 == meta
    assert out == packets
    # writing the read-back packets reproduces the file byte-exactly
    buf = io.BytesIO()
    write_recording(meta2, out, buf)
    assert buf.getvalue() == blob


def test_oversized_event_batch_is_split(rng):
    meta = RecordingMeta(width=8, height=6)
    n = MAX_EVENTS_PER_BATCH + 1000
    events = random_events(rng, n, 8, 6)
    _, out, _ = roundtrip(meta, [dvs_packet(5, events)])
    assert [len(p.payload) for p in out] == [MAX_EVENTS_PER_BATCH, 1000]
    assert all(p.host_ts_ms == 5 for p in out)
    assert np.array_equal(np.concatenate([p.payload for p in out]), events)


def test_event_outside_sensor_rejected():
    meta = RecordingMeta(width=8, height=6)
    packets = [dvs_packet(0, make_events([(8, 0, 1, 1)]))]
    with pytest.raises(ValueError, match="outside"):
        write_recording(meta, packets, io.BytesIO())


def test_bad_magic_and_version():
    with pytest.raises(UnsupportedFormatError, match="magic"):
        open_recording(io.BytesIO(b"NOPE" + b"\x00" * 20))
    meta = RecordingMeta(width=8, height=6)
    buf = io.BytesIO()
    write_recording(meta, [], buf)
    blob = bytearray(buf.getvalue())
    blob[4:6] = struct.pack("<H", 9)
    with pytest.raises(UnsupportedFormatError, match="version"):
        open_recording(io.BytesIO(bytes(blob)))


def test_truncated_file_yields_complete_packets_then_errors(rng):
    meta = RecordingMeta(width=8, height=6)
    packets = [
        dvs_packet(0, random_events(rng, 5, 8, 6)),
        dvs_packet(10, random_events(rng, 5, 8, 6)),
    ]
    buf = io.BytesIO()
    write_recording(meta, packets, buf)
    blob = buf.getvalue()
    header_len = 4 + 2 + 4 + len("width=8\nheight=6\nid=recording\nscenario=\ncreated_ms=0\n")
    record_len = 13 + 2 + 5 * EVENT_SIZE
    cut = blob[: header_len + record_len + 20]  # second record cut mid-payload

    _, it = open_recording(io.BytesIO(cut))
    got = [next(it)]
    assert got[0] == packets[0]
    with pytest.raises(TruncatedRecordingError) as err:
        next(it)
    assert err.value.offset == header_len + record_len


def test_unknown_stream_id_skipped_with_warning(rng, caplog):
    meta = RecordingMeta(width=8, height=6)
    packets = [
        dvs_packet(0, random_events(rng, 3, 8, 6)),
        dvs_packet(10, random_events(rng, 2, 8, 6)),
    ]
    buf = io.BytesIO()
    write_recording(meta, packets, buf)
    # splice a stream_id=7 record between the two valid ones
    header_len = 4 + 2 + 4 + len("width=8\nheight=6\nid=recording\nscenario=\ncreated_ms=0\n")
    first_len = 13 + 2 + 3 * EVENT_SIZE
    blob = buf.getvalue()
    alien = struct.pack("<BQI", 7, 5, 4) + b"\xde\xad\xbe\xef"
    patched = blob[: header_len + first_len] + alien + blob[header_len + first_len :]

    with caplog.at_level(logging.WARNING, logger="evdrive.recording"):
        _, it = open_recording(io.BytesIO(patched))
        out = list(it)
    assert out == packets
    assert any("stream_id=7" in r.message for r in caplog.records)


def test_stream_stats_vehicle_rate():
    # 100 samples at a 10 Hz grid: first at 0 ms, last at 9900 ms
    packets = [
        StampedPacket(StreamId.VEHICLE, 100 * i, VehicleSample(VehicleChannel.SPEED, 50.0))
        for i in range(100)
    ]
    stats = stream_stats(packets)
    veh = stats["VEHICLE"]
    assert veh["count"] == 100
    assert veh["rate_hz"] == pytest.approx(10.0)
    assert veh["channels"] == {"speed": 100}
    assert stats["DVS"]["count"] == 0 and stats["APS"]["count"] == 0


def test_stream_stats_empty():
    stats = stream_stats([])
    for name in ("DVS", "APS", "VEHICLE"):
        assert stats[name]["count"] == 0
        assert "rate_hz" not in stats[name]


def test_stream_stats_counts_events(rng):
    packets = [
        dvs_packet(0, random_events(rng, 7, 8, 6)),
        dvs_packet(10, random_events(rng, 4, 8, 6)),
    ]
    assert stream_stats(packets)["DVS"]["events"] == 11


def test_recording_class_allows_parallel_readers(tmp_path, rng):
    meta, packets = random_recording(rng, n_packets=25)
    path = tmp_path / "r.ddrc"
    with open(path, "wb") as fh:
        write_recording(meta, packets, fh)
    rec = Recording(path)
    it1, it2 = rec.packets(), rec.packets()
    a = [next(it1), next(it1)]
    b = list(it2)
    assert b == packets
    assert a == packets[:2]
    dvs_only = list(rec.packets(stream_id=StreamId.DVS))
    assert dvs_only == [p for p in packets if p.stream_id == StreamId.DVS]


def test_streaming_read_memory_bounded(tmp_path, rng):
    # ~40 MB of batches; the reader should hold one packet at a time
    meta = RecordingMeta(width=640, height=480)
    path = tmp_path / "big.ddrc"
    n_batches, per_batch = 60, 50_000
    with open(path, "wb") as fh:
        def gen():
            for i in range(n_batches):
                yield dvs_packet(i, random_events(rng, per_batch, 640, 480))
        write_recording(meta, gen(), fh)
    assert path.stat().st_size > 35_000_000

    rec = Recording(path)
    tracemalloc.start()
    total = 0
    for packet in rec.packets():
        total += len(packet.payload)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert total == n_batches * per_batch
    assert peak < 8_000_000  # a few packets' worth, not the whole file


# --- property: codec identity over randomized recordings ---------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_codec_identity_property(seed):
    rng = np.random.default_rng(seed)
    meta, packets = random_recording(rng, n_packets=int(rng.integers(0, 25)))
    meta2, out, blob = roundtrip(meta, packets)
    assert meta2 == meta
    assert out == packets
    buf = io.BytesIO()
    write_recording(meta2, out, buf)
    assert buf.getvalue() == blob
