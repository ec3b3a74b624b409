"""Reader for the exported sample files produced by the pipeline's prep step.

The file format is independent of the producing package: a 16-byte header
(magic ``DDSM``, version u16, record count u32, 6 reserved bytes) followed
by fixed-size little-endian records of steering f32 | speed f32 |
dvs 172x128 f32 | aps 172x128 f32.  Records are memory-mapped, so batches
can be fetched lazily from multi-GB files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

MAGIC = b"DDSM"
VERSION = 1
HEADER = struct.Struct("<4sHI6x")
IMAGE_HEIGHT = 128
IMAGE_WIDTH = 172

RECORD_DTYPE = np.dtype(
    [
        ("steering", "<f4"),
        ("speed", "<f4"),
        ("dvs", "<f4", (IMAGE_HEIGHT, IMAGE_WIDTH)),
        ("aps", "<f4", (IMAGE_HEIGHT, IMAGE_WIDTH)),
    ]
)

INPUT_MODES = ("dvs", "aps", "fused")


class DatasetFormatError(Exception):
    pass


@dataclass
class SampleFile:
    """Memory-mapped view of one exported dataset file."""

    path: Path
    records: np.ndarray  # memmap with RECORD_DTYPE
    window_end_ms: Optional[list[int]]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def steering(self) -> np.ndarray:
        return np.asarray(self.records["steering"], dtype=np.float32)

    def images(self, indices: np.ndarray, mode: str) -> np.ndarray:
        """Fetch a batch as (N, C, H, W) float32 with C per input mode."""
        if mode not in INPUT_MODES:
            raise ValueError(f"input mode must be one of {INPUT_MODES}, got {mode!r}")
        batch = self.records[indices]
        if mode == "dvs":
            return batch["dvs"][:, None, :, :].copy()
        if mode == "aps":
            return batch["aps"][:, None, :, :].copy()
        return np.stack([batch["dvs"], batch["aps"]], axis=1)

    def timestamps(self) -> list[int]:
        if self.window_end_ms is not None:
            return self.window_end_ms
        return list(range(len(self.records)))


def _read_manifest(path: Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if sep:
            entries[key] = value
    return entries


def open_samples(path, manifest_path=None) -> SampleFile:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
    if len(head) < HEADER.size:
        raise DatasetFormatError(f"{path}: shorter than the header")
    magic, version, count = HEADER.unpack(head)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    expected = HEADER.size + count * RECORD_DTYPE.itemsize
    actual = path.stat().st_size
    if actual != expected:
        raise DatasetFormatError(
            f"{path}: file size {actual} != {expected} for {count} records"
        )
    records = np.memmap(path, dtype=RECORD_DTYPE, mode="r", offset=HEADER.size, shape=(count,))

    window_end_ms = None
    if manifest_path is None:
        candidate = Path(str(path) + ".manifest")
        manifest_path = candidate if candidate.exists() else None
    if manifest_path is not None:
        manifest = _read_manifest(Path(manifest_path))
        raw = manifest.get("window_end_ms", "")
        if raw:
            window_end_ms = [int(v) for v in raw.split(",")]
            if len(window_end_ms) != count:
                raise DatasetFormatError(
                    f"{manifest_path}: {len(window_end_ms)} timestamps for {count} records"
                )
    return SampleFile(path=path, records=records, window_end_ms=window_end_ms)
