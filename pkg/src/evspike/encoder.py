"""Delta-modulator event encoding into binned pulse counts, with stair-step recovery.

Amplitudes are input-referred with unit mean spike peak, so the ON/OFF
thresholds are simply ``+/- k * v_spike_max``.  The modulator runs once per
sample and keeps a reference value ``r``; whenever the input moves a whole
threshold away from ``r`` it emits pulses and steps ``r`` toward the input.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import Recording, atomic_write_bytes, pack_container, unpack_container
from .errors import ConfigError, DataError, FormatError, RangeError, TruncationError

NPCM_MAGIC = b"NPCM1"
NPCM_VERSION = 1
COUNT_MAX = np.iinfo(np.uint16).max
_RECORD = np.dtype([("bin", "<u8"), ("n_on", "<u2"), ("n_off", "<u2")])
# float slack when assigning integer-microsecond times to bins
_BIN_EPS = 1e-9


@dataclass(frozen=True)
class EncoderConfig:
    k: float = 0.2
    v_spike_max: float = 1.0
    bin_us: float | None = None  # None: one sample period
    allow_multi_event_per_sample: bool = True

    def __post_init__(self):
        if not (self.k > 0 and self.v_spike_max > 0):
            raise ConfigError("th_on > 0 > th_off violated (k and v_spike_max must be positive)")
        if self.bin_us is not None and not self.bin_us > 0:
            raise ConfigError("bin_us must be positive")

    @property
    def th_on(self) -> float:
        return self.k * self.v_spike_max

    @property
    def th_off(self) -> float:
        return -self.k * self.v_spike_max

    def resolve_bin_us(self, sample_rate_hz: float) -> float:
        period = 1e6 / sample_rate_hz
        if self.bin_us is None:
            return period
        if self.bin_us < period * (1 - 1e-12):
            raise ConfigError(f"bin_us >= sample period violated ({self.bin_us} < {period})")
        return float(self.bin_us)


@dataclass(eq=False)
class PulseTrain:
    """ON/OFF pulses: ``times_us`` non-decreasing, ``polarity`` in {+1, -1}."""

    times_us: np.ndarray
    polarity: np.ndarray
    sample_rate_hz: float | None = None

    def __post_init__(self):
        self.times_us = np.asarray(self.times_us, dtype=np.int64)
        self.polarity = np.asarray(self.polarity, dtype=np.int8)
        if self.times_us.shape != self.polarity.shape:
            raise DataError("times_us and polarity differ in length")
        if np.any(np.diff(self.times_us) < 0):
            raise DataError("pulse times must be non-decreasing")
        if np.any(np.abs(self.polarity) != 1):
            raise DataError("pulse polarity must be +1 or -1")

    def __len__(self):
        return int(self.times_us.size)


@dataclass(eq=False)
class PcmSeries:
    """Sparse per-bin ON/OFF counts; only bins with at least one event are stored."""

    bin_us: float
    num_bins: int
    bins: np.ndarray
    n_on: np.ndarray
    n_off: np.ndarray
    k: float = 0.2
    v_spike_max: float = 1.0
    source_sha256: str = ""
    saturated_bins: int = 0

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.int64)
        self.n_on = np.asarray(self.n_on, dtype=np.uint16)
        self.n_off = np.asarray(self.n_off, dtype=np.uint16)
        if not (self.bins.shape == self.n_on.shape == self.n_off.shape):
            raise DataError("bins, n_on and n_off differ in length")
        if np.any(np.diff(self.bins) <= 0):
            raise DataError("bin indices must be strictly increasing")
        if self.bins.size and (self.bins[0] < 0 or self.bins[-1] >= self.num_bins):
            raise RangeError("bin index outside [0, num_bins)")
        if np.any(self.n_on.astype(np.int64) + self.n_off == 0):
            raise DataError("stored bins must have n_on + n_off > 0")

    @property
    def duration_us(self) -> float:
        return self.num_bins * self.bin_us

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        """Full-length ``(n_on, n_off)`` arrays."""
        on = np.zeros(self.num_bins, dtype=np.int64)
        off = np.zeros(self.num_bins, dtype=np.int64)
        on[self.bins] = self.n_on
        off[self.bins] = self.n_off
        return on, off

    def bin_times_us(self, bins=None) -> np.ndarray:
        """Whole-microsecond center times of ``bins`` (default: the stored ones)."""
        b = self.bins if bins is None else np.asarray(bins, dtype=np.int64)
        return np.floor((b + 0.5) * self.bin_us + 0.5).astype(np.int64)

    def total_events(self) -> int:
        return int(self.n_on.astype(np.int64).sum() + self.n_off.astype(np.int64).sum())


@dataclass(frozen=True)
class SparsityReport:
    s_pcm: float
    events_total: int
    events_on: int
    events_off: int
    num_bins: int
    nonzero_bins: int
    saturated_bins: int = 0


def _pulse_time_us(idx: np.ndarray, sample_rate_hz: float) -> np.ndarray:
    # first whole microsecond at or after the sample instant
    fs = sample_rate_hz
    if float(fs).is_integer():
        f = int(fs)
        return (idx * 1_000_000 + f - 1) // f
    return np.ceil(idx * (1e6 / fs) - _BIN_EPS).astype(np.int64)


def encode_counts(rec: Recording, cfg: EncoderConfig = EncoderConfig(), reference_out=None):
    """Run the modulator; return ``(sample_index, signed_count)`` per emitting sample."""
    x = np.asarray(rec.samples, dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise DataError(f"non-finite sample at index {bad[0]}", index=int(bad[0]))
    return kernels.delta_modulate(x, cfg.th_on, cfg.th_off, cfg.allow_multi_event_per_sample, reference_out)


def encode(rec: Recording, cfg: EncoderConfig = EncoderConfig(), reference_out=None) -> PulseTrain:
    """Delta-modulate a recording into an ON/OFF :class:`PulseTrain`.

    With multi-event enabled, a per-sample change spanning ``m`` thresholds
    emits ``m`` pulses at that sample and moves the reference by ``m``
    thresholds, so ``|x[n] - r| < th_on`` after every sample.  Otherwise one
    pulse is emitted and the reference resets to the sample value.
    ``reference_out``, if given, is filled with the reference after each sample.
    """
    idx, cnt = encode_counts(rec, cfg, reference_out)
    reps = np.abs(cnt)
    times = np.repeat(_pulse_time_us(idx, rec.sample_rate_hz), reps)
    pol = np.repeat(np.sign(cnt).astype(np.int8), reps)
    return PulseTrain(times, pol, rec.sample_rate_hz)


def num_bins_for(duration_us: float, bin_us: float) -> int:
    return int(math.ceil(duration_us / bin_us - _BIN_EPS))


def bin_pcm(pt: PulseTrain, cfg: EncoderConfig, duration_us: float, source_sha256: str = "") -> PcmSeries:
    """Accumulate pulses into bins of ``bin_us``; only non-zero bins are kept."""
    if pt.sample_rate_hz is not None:
        bin_us = cfg.resolve_bin_us(pt.sample_rate_hz)
    elif cfg.bin_us is not None:
        bin_us = float(cfg.bin_us)
    else:
        raise ConfigError("bin_us must be set when the pulse train carries no sample rate")
    nb = num_bins_for(duration_us, bin_us)
    if pt.times_us.size and pt.times_us[0] < 0:
        raise RangeError("pulse time before 0", index=0)
    b = np.floor(pt.times_us / bin_us + _BIN_EPS).astype(np.int64)
    over = np.flatnonzero(b >= nb)
    if over.size:
        raise RangeError(f"pulse at {pt.times_us[over[0]]} us beyond duration {duration_us} us",
                         index=int(over[0]))
    on = np.bincount(b[pt.polarity > 0], minlength=0)
    off = np.bincount(b[pt.polarity < 0], minlength=0)
    size = max(on.size, off.size)
    on = np.pad(on, (0, size - on.size))
    off = np.pad(off, (0, size - off.size))
    nz = np.flatnonzero(on + off)
    on_nz, off_nz = on[nz], off[nz]
    saturated = int(np.count_nonzero((on_nz > COUNT_MAX) | (off_nz > COUNT_MAX)))
    return PcmSeries(
        bin_us=bin_us, num_bins=nb, bins=nz,
        n_on=np.minimum(on_nz, COUNT_MAX), n_off=np.minimum(off_nz, COUNT_MAX),
        k=cfg.k, v_spike_max=cfg.v_spike_max, source_sha256=source_sha256,
        saturated_bins=saturated,
    )


def recording_sha256(rec: Recording) -> str:
    return hashlib.sha256(np.asarray(rec.samples, dtype="<f4").tobytes()).hexdigest()


def to_pcm(rec: Recording, cfg: EncoderConfig = EncoderConfig()) -> PcmSeries:
    """``encode`` followed by ``bin_pcm`` over the recording's full duration."""
    return bin_pcm(encode(rec, cfg), cfg, rec.duration_us, recording_sha256(rec))


def recover(pcm: PcmSeries, cfg: EncoderConfig | None = None, initial: float = 0.0) -> Recording:
    """Stair-step reconstruction sampled once per bin.

    ``value[b] = initial + sum_{b' <= b} (n_on * th_on + n_off * th_off)``.
    Thresholds come from ``cfg`` when given, otherwise from the series itself.
    """
    if cfg is None:
        cfg = EncoderConfig(k=pcm.k, v_spike_max=pcm.v_spike_max)
    on, off = pcm.dense()
    steps = on * cfg.th_on + off * cfg.th_off
    values = initial + np.cumsum(steps)
    return Recording(values, 1e6 / pcm.bin_us, {"recovered_from": pcm.source_sha256})


def sparsity(pcm: PcmSeries) -> SparsityReport:
    on = int(pcm.n_on.astype(np.int64).sum())
    off = int(pcm.n_off.astype(np.int64).sum())
    nz = int(pcm.bins.size)
    return SparsityReport(
        s_pcm=nz / pcm.num_bins if pcm.num_bins else 0.0,
        events_total=on + off, events_on=on, events_off=off,
        num_bins=int(pcm.num_bins), nonzero_bins=nz, saturated_bins=pcm.saturated_bins,
    )


def pcm_to_bytes(pcm: PcmSeries) -> bytes:
    header = {
        "bin_us": float(pcm.bin_us),
        "num_bins": int(pcm.num_bins),
        "k": float(pcm.k),
        "v_spike_max": float(pcm.v_spike_max),
        "source_recording_sha256": pcm.source_sha256,
    }
    rec = np.empty(pcm.bins.size, dtype=_RECORD)
    rec["bin"] = pcm.bins
    rec["n_on"] = pcm.n_on
    rec["n_off"] = pcm.n_off
    return pack_container(NPCM_MAGIC, NPCM_VERSION, header, rec.tobytes())


def pcm_from_bytes(data: bytes) -> PcmSeries:
    header, payload, offset = unpack_container(data, NPCM_MAGIC, NPCM_VERSION)
    try:
        bin_us = float(header["bin_us"])
        nb = int(header["num_bins"])
        k = float(header["k"])
        vmax = float(header["v_spike_max"])
        sha = str(header.get("source_recording_sha256", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"NPCM1 header missing or invalid field: {exc}", offset=6) from None
    whole = len(payload) - len(payload) % _RECORD.itemsize
    if whole != len(payload):
        raise TruncationError("trailing partial PCM record", offset=offset + whole)
    rec = np.frombuffer(payload, dtype=_RECORD)
    try:
        return PcmSeries(bin_us, nb, rec["bin"].astype(np.int64), rec["n_on"], rec["n_off"],
                         k=k, v_spike_max=vmax, source_sha256=sha)
    except DataError as exc:
        raise FormatError(f"invalid PCM records: {exc}", offset=offset) from None


def write_pcm(path, pcm: PcmSeries) -> None:
    atomic_write_bytes(path, pcm_to_bytes(pcm))


def read_pcm(path) -> PcmSeries:
    with open(path, "rb") as fh:
        return pcm_from_bytes(fh.read())


__all__ = [
    "EncoderConfig", "PulseTrain", "PcmSeries", "SparsityReport",
    "encode", "encode_counts", "bin_pcm", "to_pcm", "recover", "sparsity",
    "write_pcm", "read_pcm", "pcm_to_bytes", "pcm_from_bytes",
]
