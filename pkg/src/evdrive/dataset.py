"""Filtering, rebalancing, temporal splitting, and dataset export.

The exported sample file is a 16-byte header (magic ``DDSM``, version u16,
count u32, 6 reserved bytes) followed by fixed-size little-endian records:
steering f32 | speed f32 | dvs 172x128 f32 | aps 172x128 f32.  A UTF-8
key=value manifest travels next to it.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .frames import (
    NETWORK_HEIGHT,
    NETWORK_WIDTH,
    SENSOR_HEIGHT,
    SENSOR_WIDTH,
    accumulate_dvs,
    downsample,
    normalize_aps,
    normalize_dvs,
)
from .recording import Recording
from .sync import SyncPolicy, WindowedRecord, merge_streams, window_records

logger = logging.getLogger(__name__)

DATASET_MAGIC = b"DDSM"
DATASET_VERSION = 1
_DATASET_HEADER = struct.Struct("<4sHI6x")  # 16 bytes
_IMAGE_VALUES = NETWORK_WIDTH * NETWORK_HEIGHT
RECORD_BYTES = 4 + 4 + 4 * _IMAGE_VALUES + 4 * _IMAGE_VALUES

MIN_SPEED_KMH = 15.0
ANGLE_SIGMA_FACTOR = 3.0
STRAIGHT_BAND_DEG = 5.0
STRAIGHT_DROP_PROB = 0.7
TRAIN_FRACTION_TENTHS = 7  # first floor(0.7 n) samples of each recording


class DatasetError(Exception):
    pass


@dataclass(eq=False)
class LabeledSample:
    """One training sample: normalized DVS+APS pair plus labels."""

    dvs: np.ndarray  # float32, (128, 172), values in [0, 1]
    aps: np.ndarray  # float32, (128, 172), values in [0, 1]
    steering_deg: float
    speed_kmh: float
    recording_id: str = ""
    window_end_ms: int = 0


@dataclass
class PrepStats:
    """Per-split accounting of the filtering and rebalancing rules."""

    steering_sigma_deg: float
    input_count: int = 0
    dropped_low_speed: int = 0
    dropped_large_angle: int = 0
    dropped_rebalance: int = 0
    retained_count: int = 0

    @property
    def retained_fraction(self) -> float:
        return self.retained_count / self.input_count if self.input_count else 0.0


def build_sample(record: WindowedRecord, recording_id: str = "") -> LabeledSample:
    """Turn a windowed record into a normalized network-resolution sample.

    Labels are rounded through float32, the precision of the export format.
    """
    if (record.aps.height, record.aps.width) != (SENSOR_HEIGHT, SENSOR_WIDTH):
        raise DatasetError(
            f"sample building requires {SENSOR_WIDTH}x{SENSOR_HEIGHT} frames, "
            f"got {record.aps.width}x{record.aps.height}"
        )
    hist = accumulate_dvs(record.events, SENSOR_WIDTH, SENSOR_HEIGHT)
    dvs = downsample(normalize_dvs(hist)).astype(np.float32)
    aps = downsample(normalize_aps(record.aps)).astype(np.float32)
    return LabeledSample(
        dvs=dvs,
        aps=aps,
        steering_deg=float(np.float32(record.steering_deg)),
        speed_kmh=float(np.float32(record.speed_kmh)),
        recording_id=recording_id,
        window_end_ms=record.end_ms,
    )


def _split_counts(n: int) -> int:
    return (TRAIN_FRACTION_TENTHS * n) // 10


def temporal_split(
    samples_per_recording: Mapping[str, Sequence[LabeledSample]]
) -> tuple[list[LabeledSample], list[LabeledSample]]:
    """First 70% of each recording to train, the rest to test.

    Splits are computed independently per recording; empty recordings are
    skipped with a warning.
    """
    train: list[LabeledSample] = []
    test: list[LabeledSample] = []
    for rec_id, samples in samples_per_recording.items():
        ends = [s.window_end_ms for s in samples]
        if any(b < a for a, b in zip(ends, ends[1:])):
            raise DatasetError(f"recording {rec_id!r}: samples not time-ordered")
        n = len(samples)
        if n == 0:
            logger.warning("recording %r has no samples; skipped", rec_id)
            continue
        n_train = _split_counts(n)
        train.extend(samples[:n_train])
        test.extend(samples[n_train:])
    return train, test


def steering_sigma(samples: Iterable[LabeledSample]) -> float:
    """Population standard deviation of steering over the training corpus."""
    angles = np.array([s.steering_deg for s in samples], dtype=np.float64)
    if angles.size == 0:
        raise DatasetError("cannot compute steering sigma of an empty corpus")
    return float(angles.std())


def filter_samples(
    samples: Sequence[LabeledSample], stats: PrepStats, is_train: bool
) -> list[LabeledSample]:
    """Drop low-speed samples and steering outliers beyond 3 sigma.

    The same rule applies to both splits; sigma comes from the training
    corpus (stats.steering_sigma_deg).
    """
    del is_train  # same rule either way; the split only selects the stats bucket
    limit = ANGLE_SIGMA_FACTOR * stats.steering_sigma_deg
    kept = []
    for sample in samples:
        stats.input_count += 1
        if sample.speed_kmh < MIN_SPEED_KMH:
            stats.dropped_low_speed += 1
        elif abs(sample.steering_deg) > limit:
            stats.dropped_large_angle += 1
        else:
            kept.append(sample)
            stats.retained_count += 1
    return kept


def rebalance_straight(
    samples: Sequence[LabeledSample], seed: int, stats: Optional[PrepStats] = None
) -> list[LabeledSample]:
    """Randomly prune straight-driving samples from the training split.

    Each sample with |steering| <= 5 degrees is independently dropped with
    probability 0.7; one uniform draw is consumed per input sample, so the
    retained index set is a pure function of (seed, input order).
    """
    rng = np.random.default_rng(seed)
    draws = rng.random(len(samples))
    kept = []
    for sample, draw in zip(samples, draws):
        if abs(sample.steering_deg) <= STRAIGHT_BAND_DEG and draw < STRAIGHT_DROP_PROB:
            if stats is not None:
                stats.dropped_rebalance += 1
                stats.retained_count -= 1
        else:
            kept.append(sample)
    return kept


class _DatasetWriter:
    """Streams fixed-size records; patches the count on close."""

    def __init__(self, path):
        self.path = Path(path)
        self.count = 0
        self.window_end_ms: list[int] = []
        self._fh = open(self.path, "wb")
        self._fh.write(_DATASET_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, 0))

    def append(self, sample: LabeledSample) -> None:
        for name, img in (("dvs", sample.dvs), ("aps", sample.aps)):
            if img.shape != (NETWORK_HEIGHT, NETWORK_WIDTH):
                raise DatasetError(
                    f"{name} image must be {NETWORK_HEIGHT}x{NETWORK_WIDTH}, got {img.shape}"
                )
        if not (np.isfinite(sample.steering_deg) and np.isfinite(sample.speed_kmh)):
            raise DatasetError("sample labels must be finite")
        try:
            self._fh.write(struct.pack("<ff", sample.steering_deg, sample.speed_kmh))
            self._fh.write(np.ascontiguousarray(sample.dvs, dtype="<f4").tobytes())
            self._fh.write(np.ascontiguousarray(sample.aps, dtype="<f4").tobytes())
        except OSError as exc:
            raise DatasetError(
                f"write failed at {self.path} offset {16 + self.count * RECORD_BYTES}: {exc}"
            ) from exc
        self.count += 1
        self.window_end_ms.append(sample.window_end_ms)

    def close(self) -> None:
        self._fh.seek(0)
        self._fh.write(_DATASET_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, self.count))
        self._fh.close()


def _write_manifest(path, entries: Mapping[str, object]) -> None:
    lines = [f"{key}={value}" for key, value in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DatasetError(f"malformed manifest line: {line!r}")
        entries[key] = value
    return entries


def export_dataset(
    samples: Sequence[LabeledSample],
    path,
    manifest_path=None,
    extra: Optional[Mapping[str, object]] = None,
) -> dict[str, object]:
    """Write samples to a flat binary file plus a key=value manifest.

    Returns the manifest entries.  The manifest records the per-sample
    window end times so downstream consumers can emit timestamped
    predictions; the binary records themselves carry only labels and
    images.
    """
    if len(samples) == 0:
        raise DatasetError("refusing to export an empty sample set")
    path = Path(path)
    writer = _DatasetWriter(path)
    for sample in samples:
        writer.append(sample)
    writer.close()

    manifest: dict[str, object] = {
        "format": DATASET_MAGIC.decode("ascii"),
        "version": DATASET_VERSION,
        "count": writer.count,
        "record_bytes": RECORD_BYTES,
        "window_end_ms": ",".join(str(t) for t in writer.window_end_ms),
    }
    if extra:
        manifest.update(extra)
    if manifest_path is None:
        manifest_path = path.with_suffix(path.suffix + ".manifest")
    _write_manifest(manifest_path, manifest)
    return manifest


def read_dataset(path, manifest_path=None) -> list[LabeledSample]:
    """Read back an exported dataset file.

    Recording ids are not stored in the binary format; window end times are
    recovered from the manifest when one is found next to the file.
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _DATASET_HEADER.size:
        raise DatasetError(f"{path}: shorter than the dataset header")
    magic, version, count = _DATASET_HEADER.unpack_from(blob)
    if magic != DATASET_MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    expected = _DATASET_HEADER.size + count * RECORD_BYTES
    if len(blob) != expected:
        raise DatasetError(f"{path}: size {len(blob)} != {expected} for {count} records")

    ends: list[int] = [0] * count
    if manifest_path is None:
        candidate = path.with_suffix(path.suffix + ".manifest")
        manifest_path = candidate if candidate.exists() else None
    if manifest_path is not None:
        manifest = read_manifest(manifest_path)
        raw = manifest.get("window_end_ms", "")
        if raw:
            ends = [int(v) for v in raw.split(",")]
            if len(ends) != count:
                raise DatasetError(f"{manifest_path}: window_end_ms length mismatch")

    samples = []
    offset = _DATASET_HEADER.size
    for i in range(count):
        steering, speed = struct.unpack_from("<ff", blob, offset)
        offset += 8
        dvs = np.frombuffer(blob, "<f4", _IMAGE_VALUES, offset).reshape(
            NETWORK_HEIGHT, NETWORK_WIDTH
        ).copy()
        offset += 4 * _IMAGE_VALUES
        aps = np.frombuffer(blob, "<f4", _IMAGE_VALUES, offset).reshape(
            NETWORK_HEIGHT, NETWORK_WIDTH
        ).copy()
        offset += 4 * _IMAGE_VALUES
        samples.append(
            LabeledSample(dvs, aps, float(steering), float(speed), "", ends[i])
        )
    return samples


def _window_labels(path, policy: SyncPolicy):
    """First prep pass: window labels only, no image work."""
    rec = Recording(path)
    counters: dict[str, int] = {}
    labels = [
        (r.end_ms, float(np.float32(r.steering_deg)), float(np.float32(r.speed_kmh)))
        for r in window_records(merge_streams(rec), policy, counters)
    ]
    return rec.meta, labels, counters


def run_prep(
    container_paths: Sequence, out_prefix, policy: SyncPolicy, seed: int
) -> dict[str, object]:
    """Prepare train/test dataset files from recording containers.

    Containers are scanned twice: a label-only pass fixes the split, the
    sigma filter, and the rebalancing decisions, then a second pass builds
    images for the retained windows and streams them straight to disk.
    """
    out_prefix = Path(out_prefix)
    metas, labels_per_rec, counters_per_rec = [], [], []
    for path in container_paths:
        meta, labels, counters = _window_labels(path, policy)
        if not labels:
            logger.warning("recording %s produced no windows; skipped", path)
        metas.append(meta)
        labels_per_rec.append(labels)
        counters_per_rec.append(counters)
    ids = [m.id for m in metas]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"duplicate recording ids across containers: {ids}")

    n_train_per_rec = [_split_counts(len(labels)) for labels in labels_per_rec]
    train_angles = np.array(
        [
            lab[1]
            for labels, n_train in zip(labels_per_rec, n_train_per_rec)
            for lab in labels[:n_train]
        ],
        dtype=np.float64,
    )
    if train_angles.size == 0:
        raise DatasetError("no training samples in any container")
    sigma = float(train_angles.std())
    limit = ANGLE_SIGMA_FACTOR * sigma
    train_stats = PrepStats(steering_sigma_deg=sigma)
    test_stats = PrepStats(steering_sigma_deg=sigma)

    # Retention decisions per (recording, window ordinal), computed from the
    # label pass so the image pass can skip dropped windows entirely.
    keep: list[list[bool]] = []
    train_survivors: list[tuple[int, int]] = []
    for r, (labels, n_train) in enumerate(zip(labels_per_rec, n_train_per_rec)):
        flags = []
        for i, (_, steering, speed) in enumerate(labels):
            stats = train_stats if i < n_train else test_stats
            stats.input_count += 1
            if speed < MIN_SPEED_KMH:
                stats.dropped_low_speed += 1
                flags.append(False)
            elif abs(steering) > limit:
                stats.dropped_large_angle += 1
                flags.append(False)
            else:
                stats.retained_count += 1
                flags.append(True)
                if i < n_train:
                    train_survivors.append((r, i))
        keep.append(flags)

    rng = np.random.default_rng(seed)
    draws = rng.random(len(train_survivors))
    for (r, i), draw in zip(train_survivors, draws):
        steering = labels_per_rec[r][i][1]
        if abs(steering) <= STRAIGHT_BAND_DEG and draw < STRAIGHT_DROP_PROB:
            keep[r][i] = False
            train_stats.dropped_rebalance += 1
            train_stats.retained_count -= 1

    train_writer = _DatasetWriter(out_prefix.parent / (out_prefix.name + ".train.bin"))
    test_writer = _DatasetWriter(out_prefix.parent / (out_prefix.name + ".test.bin"))
    try:
        for r, path in enumerate(container_paths):
            rec = Recording(path)
            n_train = n_train_per_rec[r]
            for i, record in enumerate(window_records(merge_streams(rec), policy)):
                if not keep[r][i]:
                    continue
                writer = train_writer if i < n_train else test_writer
                writer.append(build_sample(record, metas[r].id))
    finally:
        train_writer.close()
        test_writer.close()

    if train_writer.count == 0 or test_writer.count == 0:
        raise DatasetError(
            f"prep produced an empty split (train={train_writer.count}, "
            f"test={test_writer.count})"
        )

    summary: dict[str, object] = {"steering_sigma_deg": sigma, "seed": seed}
    for split, writer, stats in (
        ("train", train_writer, train_stats),
        ("test", test_writer, test_stats),
    ):
        manifest = {
            "format": DATASET_MAGIC.decode("ascii"),
            "version": DATASET_VERSION,
            "count": writer.count,
            "record_bytes": RECORD_BYTES,
            "split": split,
            "steering_sigma_deg": f"{sigma:.9g}",
            "rebalance_seed": seed,
            "prune_mode": f"bernoulli_p{STRAIGHT_DROP_PROB:.2f}"
            if split == "train"
            else "none",
            "window_ms": policy.window_ms,
            "label_mode": policy.label_mode,
            "sources": ";".join(ids),
            "input_count": stats.input_count,
            "dropped_low_speed": stats.dropped_low_speed,
            "dropped_large_angle": stats.dropped_large_angle,
            "dropped_rebalance": stats.dropped_rebalance,
            "retained_fraction": f"{stats.retained_fraction:.6f}",
            "window_end_ms": ",".join(str(t) for t in writer.window_end_ms),
        }
        _write_manifest(writer.path.with_suffix(".bin.manifest"), manifest)
        summary[f"{split}.count"] = writer.count
        summary[f"{split}.dropped_low_speed"] = stats.dropped_low_speed
        summary[f"{split}.dropped_large_angle"] = stats.dropped_large_angle
        summary[f"{split}.dropped_rebalance"] = stats.dropped_rebalance
        summary[f"{split}.retained_fraction"] = stats.retained_fraction
        summary[f"{split}.path"] = str(writer.path)
    for path, counters in zip(container_paths, counters_per_rec):
        for key, value in counters.items():
            summary[f"windows.{Path(path).name}.{key}"] = value
    return summary
