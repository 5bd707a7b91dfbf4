"""Classical comparison detectors (AT-SPD and NEO-SPD) over a band-passed signal.

Both detectors take a (filtered) :class:`~evspike.core.Recording` and return a
refractory-spaced :class:`~evspike.core.DetectionSet`.  They also accept the
stair-step signal produced by :func:`evspike.encoder.recover`, which is
already sampled at the PCM bin rate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .core import DetectionSet, Recording
from .errors import ConfigError, DataError

_DEFAULT_MULTIPLIER = {"absolute": 4.0, "neo": 8.0}
NEO_SMOOTHING_POINTS = 13
PEAK_SEARCH_US = 500.0


@dataclass(frozen=True)
class FilterSpec:
    low_hz: float = 300.0
    high_hz: float = 3000.0
    order: int = 4

    def validate(self, sample_rate_hz: float) -> None:
        if not 0 < self.low_hz < self.high_hz < sample_rate_hz / 2:
            raise ConfigError(
                f"filter corners must satisfy 0 < low_hz < high_hz < sample_rate/2 "
                f"(got {self.low_hz}, {self.high_hz} at {sample_rate_hz} Hz)"
            )
        if self.order < 1:
            raise ConfigError("filter order must be >= 1")


@dataclass(frozen=True)
class ThresholdSpec:
    method: str = "absolute"
    multiplier: float | None = None
    t_ref_us: float = 1000.0

    def __post_init__(self):
        if self.method not in _DEFAULT_MULTIPLIER:
            raise ConfigError(f"threshold method must be 'absolute' or 'neo', got {self.method!r}")
        if self.multiplier is None:
            object.__setattr__(self, "multiplier", _DEFAULT_MULTIPLIER[self.method])
        if not self.multiplier > 0:
            raise ConfigError("multiplier must be > 0")
        if not self.t_ref_us > 0:
            raise ConfigError("t_ref_us must be > 0")


def design_bandpass(sample_rate_hz: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Butterworth band-pass as cascaded second-order sections."""
    spec.validate(sample_rate_hz)
    return signal.butter(spec.order, [spec.low_hz, spec.high_hz], btype="bandpass",
                         fs=sample_rate_hz, output="sos")


def filter_array(x: np.ndarray, sample_rate_hz: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Zero-phase (forward-backward) band-pass of a raw array."""
    sos = design_bandpass(sample_rate_hz, spec)
    x = np.asarray(x, dtype=np.float64)
    # default padlen of sosfiltfilt, capped for short inputs
    padlen = min(3 * (2 * len(sos) + 1), x.size - 1)
    return signal.sosfiltfilt(sos, x, padlen=max(padlen, 0))


def bandpass(rec: Recording, spec: FilterSpec = FilterSpec()) -> Recording:
    out = filter_array(rec.samples, rec.sample_rate_hz, spec)
    return Recording(out, rec.sample_rate_hz, dict(rec.meta, filtered=[spec.low_hz, spec.high_hz, spec.order]))


def _peak_gated(x_peak: np.ndarray, candidates: np.ndarray, rec: Recording,
                t_ref_us: float, use_max: bool) -> np.ndarray:
    """Walk threshold candidates, snapping each to the local extremum of
    ``x_peak`` within the following 0.5 ms, with refractory hold-off."""
    period = rec.sample_period_us
    win = max(1, int(round(PEAK_SEARCH_US / period)))
    times = []
    last = None
    for n in candidates.tolist():
        if last is not None and round(n * period) - last < t_ref_us:
            continue
        seg = x_peak[n:n + win]
        k = n + int(np.argmax(seg) if use_max else np.argmin(seg))
        last = int(round(k * period))
        times.append(last)
    return np.asarray(times, dtype=np.int64)


def noise_level(x: np.ndarray) -> float:
    """Robust noise estimate median(|x|)/0.6745."""
    return float(np.median(np.abs(x)) / 0.6745)


def detect_at(rec: Recording, spec: ThresholdSpec = ThresholdSpec()) -> DetectionSet:
    """Absolute negative-threshold spike detection (AT-SPD)."""
    x = np.asarray(rec.samples, dtype=np.float64)
    thr = -spec.multiplier * noise_level(x)
    candidates = np.flatnonzero(x < thr)
    times = _peak_gated(x, candidates, rec, spec.t_ref_us, use_max=False)
    return DetectionSet(times, detector_tag="at")


def neo(x: np.ndarray) -> np.ndarray:
    """Nonlinear energy operator x[n]^2 - x[n-1]x[n+1]; endpoints set to 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 3:
        raise DataError(f"NEO needs at least 3 samples, got {x.size}")
    psi = np.zeros_like(x)
    psi[1:-1] = x[1:-1] ** 2 - x[:-2] * x[2:]
    return psi


def smooth_neo(psi: np.ndarray) -> np.ndarray:
    w = signal.windows.triang(NEO_SMOOTHING_POINTS)
    return np.convolve(psi, w / w.sum(), mode="same")


def detect_neo(rec: Recording, spec: ThresholdSpec = ThresholdSpec(method="neo")) -> DetectionSet:
    """NEO-SPD: threshold the smoothed energy at ``multiplier`` times its mean."""
    psi = neo(rec.samples)
    sm = smooth_neo(psi)
    thr = spec.multiplier * float(np.mean(sm))
    candidates = np.flatnonzero(sm > thr)
    times = _peak_gated(psi, candidates, rec, spec.t_ref_us, use_max=True)
    return DetectionSet(times, detector_tag="neo")


def detect(rec: Recording, spec: ThresholdSpec) -> DetectionSet:
    if spec.method == "neo":
        return detect_neo(rec, spec)
    return detect_at(rec, spec)
