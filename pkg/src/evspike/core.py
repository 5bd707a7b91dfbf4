"""Value types shared across the pipeline and their small file helpers."""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, TruncationError


@dataclass(eq=False)
class Recording:
    """Uniformly sampled single-channel signal, amplitudes relative to unit spike peak."""

    samples: np.ndarray
    sample_rate_hz: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError("recording must be a non-empty 1-D signal")
        if not self.sample_rate_hz > 0:
            raise DataError("sample_rate_hz must be positive")
        bad = np.flatnonzero(~np.isfinite(self.samples))
        if bad.size:
            raise DataError(f"non-finite sample at index {bad[0]}", index=int(bad[0]))

    @property
    def sample_period_us(self) -> float:
        return 1e6 / self.sample_rate_hz

    @property
    def duration_us(self) -> float:
        return self.samples.size * self.sample_period_us

    def sample_times_us(self) -> np.ndarray:
        """Whole-microsecond timestamp of every sample."""
        return np.round(np.arange(self.samples.size) * self.sample_period_us).astype(np.int64)


@dataclass(eq=False)
class GroundTruth:
    """Peak times of the simulated spikes and the neuron that fired each."""

    spike_times_us: np.ndarray
    neuron_ids: np.ndarray | None = None  # None: all attributed to neuron 0

    def __post_init__(self):
        self.spike_times_us = np.asarray(self.spike_times_us, dtype=np.int64)
        if self.neuron_ids is None:
            self.neuron_ids = np.zeros(self.spike_times_us.shape, np.int64)
        self.neuron_ids = np.asarray(self.neuron_ids, dtype=np.int64)
        if self.spike_times_us.shape != self.neuron_ids.shape:
            raise DataError("spike_times_us and neuron_ids differ in length")
        if np.any(np.diff(self.spike_times_us) <= 0):
            raise DataError("ground-truth spike times must be strictly increasing")

    def __len__(self):
        return int(self.spike_times_us.size)

    @classmethod
    def empty(cls) -> GroundTruth:
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64))


@dataclass(eq=False)
class DetectionSet:
    """Ordered detected spike times on one channel."""

    times_us: np.ndarray
    channel_id: int = 0
    detector_tag: str = ""

    def __post_init__(self):
        self.times_us = np.asarray(self.times_us, dtype=np.int64)
        if np.any(np.diff(self.times_us) <= 0):
            raise DataError("detection times must be strictly increasing")

    def __len__(self):
        return int(self.times_us.size)


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# Binary containers: magic + version byte + u32 LE header length + JSON header + payload.

def pack_container(magic: bytes, version: int, header: dict, payload: bytes) -> bytes:
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return magic + bytes([version]) + struct.pack("<I", len(hdr)) + hdr + payload


def unpack_container(data: bytes, magic: bytes, version: int) -> tuple[dict, bytes, int]:
    """Split a container into ``(header, payload, payload_offset)``."""
    m = len(magic)
    if len(data) < m or data[:m] != magic:
        raise FormatError(f"bad magic, expected {magic!r}", offset=0)
    if len(data) < m + 1:
        raise TruncationError("missing version byte", offset=m)
    if data[m] != version:
        raise FormatError(f"unsupported version {data[m]}", offset=m)
    if len(data) < m + 5:
        raise TruncationError("missing header length", offset=m + 1)
    (hlen,) = struct.unpack_from("<I", data, m + 1)
    start = m + 5
    if len(data) < start + hlen:
        raise TruncationError(f"header declares {hlen} bytes, file ends early", offset=len(data))
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid JSON: {exc}", offset=start) from None
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object", offset=start)
    return header, data[start + hlen:], start + hlen


DETECTION_FIELDS = ("time_us", "channel", "detector")


def detections_to_csv(det: DetectionSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DETECTION_FIELDS)
    for t in det.times_us.tolist():
        w.writerow((t, det.channel_id, det.detector_tag))
    return buf.getvalue()


def write_detections(path, det: DetectionSet) -> None:
    atomic_write_text(path, detections_to_csv(det))


def read_detections(path) -> DetectionSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != DETECTION_FIELDS:
        raise FormatError(f"{path}: expected header {','.join(DETECTION_FIELDS)}")
    body = rows[1:]
    channel = int(body[0][1]) if body else 0
    tag = body[0][2] if body else ""
    try:
        times = [int(r[0]) for r in body]
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: bad detection row: {exc}") from None
    return DetectionSet(np.asarray(times, dtype=np.int64), channel, tag)
