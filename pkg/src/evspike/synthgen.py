"""Synthetic extracellular recordings with ground truth, and the NREC1 container.

Each neuron fires as a Poisson process thinned by a per-neuron refractory
period.  Every spike adds that neuron's biphasic template (trough normalized
to -1, amplitude jittered by U[0.9, 1.1]) centered on its peak sample.
Background noise is white Gaussian with standard deviation ``noise_sigma``,
band-limited by the same zero-phase band-pass used by the baselines.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import FilterSpec, filter_array
from .core import GroundTruth, Recording, atomic_write_bytes, pack_container, unpack_container
from .errors import ConfigError, FormatError, TruncationError

GENERATOR_VERSION = "evspike-synth-1"
NREC_MAGIC = b"NREC1"
NREC_VERSION = 1

# (trough_ms, trough_width_ms, rebound_ms, rebound_width_ms, rebound_gain)
_TEMPLATE_PARAMS = (
    (0.30, 0.10, 0.58, 0.16, 0.40),
    (0.34, 0.12, 0.62, 0.15, 0.45),
    (0.28, 0.09, 0.55, 0.18, 0.35),
)


@dataclass(frozen=True)
class SpikeTemplate:
    shape: np.ndarray
    duration_ms: float = 1.0
    template_id: int = 0

    @property
    def peak_index(self) -> int:
        return int(np.argmax(np.abs(self.shape)))


def make_templates(sample_rate_hz: float, num: int = 3, duration_ms: float = 1.0) -> list[SpikeTemplate]:
    """Peak-normalized difference-of-Gaussians spike shapes (trough first)."""
    length = int(round(duration_ms * sample_rate_hz / 1000.0))
    # shape parameters are in ms for a 1 ms template; other durations stretch it
    t_ms = (np.arange(length) + 0.5) * 1000.0 / sample_rate_hz / duration_ms
    out = []
    for i in range(num):
        t0, w0, t1, w1, gain = _TEMPLATE_PARAMS[i % len(_TEMPLATE_PARAMS)]
        s = -np.exp(-((t_ms - t0) ** 2) / (2 * w0**2)) + gain * np.exp(-((t_ms - t1) ** 2) / (2 * w1**2))
        s /= np.max(np.abs(s))
        out.append(SpikeTemplate(s, duration_ms, i))
    return out


@dataclass(frozen=True)
class GeneratorConfig:
    duration_s: float = 60.0
    noise_sigma: float = 0.1
    sample_rate_hz: float = 24000.0
    num_neurons: int = 3
    firing_rate_hz: float = 20.0
    per_neuron_refractory_ms: float = 2.0
    seed: int = 0
    filter: FilterSpec = field(default_factory=FilterSpec)

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise ConfigError("sample_rate_hz > 0 violated")
        if not self.duration_s > 0:
            raise ConfigError("duration_s > 0 violated")
        if not 0 <= self.noise_sigma < 1:
            raise ConfigError("0 <= noise_sigma < 1 violated")
        if self.num_neurons < 0:
            raise ConfigError("num_neurons >= 0 violated")
        if self.firing_rate_hz < 0:
            raise ConfigError("firing_rate_hz >= 0 violated")
        if self.per_neuron_refractory_ms < 0:
            raise ConfigError("per_neuron_refractory_ms >= 0 violated")
        if not self.firing_rate_hz * self.per_neuron_refractory_ms / 1000.0 < 1:
            raise ConfigError("firing_rate_hz * per_neuron_refractory_ms / 1000 < 1 violated")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


def _spike_train(rng: np.random.Generator, rate: float, duration: float, refractory: float) -> np.ndarray:
    if rate <= 0:
        return np.zeros(0)
    # draw with headroom, then extend if the Poisson tail ran short
    n = int(rate * duration + 10 * np.sqrt(rate * duration) + 10)
    t = np.cumsum(rng.exponential(1.0 / rate, n))
    while t[-1] < duration:
        t = np.concatenate([t, t[-1] + np.cumsum(rng.exponential(1.0 / rate, n))])
    t = t[t < duration]
    kept = []
    last = -np.inf
    for ti in t.tolist():
        if ti - last >= refractory:
            kept.append(ti)
            last = ti
    return np.asarray(kept)


def _simulate(config: GeneratorConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Float64 samples plus peak sample index and neuron id of every spike."""
    fs = config.sample_rate_hz
    n = int(round(config.duration_s * fs))
    if n < 1:
        raise ConfigError("duration_s * sample_rate_hz must give at least one sample")
    ss = np.random.SeedSequence(int(config.seed))
    rng_spk, rng_amp, rng_noise = (np.random.default_rng(s) for s in ss.spawn(3))
    templates = make_templates(fs, max(config.num_neurons, 1))

    peaks, ids = [], []
    for k in range(config.num_neurons):
        t = _spike_train(rng_spk, config.firing_rate_hz, config.duration_s,
                         config.per_neuron_refractory_ms / 1000.0)
        s = np.clip(np.round(t * fs).astype(np.int64), 0, n - 1)
        peaks.append(s)
        ids.append(np.full(s.size, k, dtype=np.int64))
    peaks = np.concatenate(peaks) if peaks else np.zeros(0, np.int64)
    ids = np.concatenate(ids) if ids else np.zeros(0, np.int64)
    order = np.lexsort((ids, peaks))
    peaks, ids = peaks[order], ids[order]
    # two neurons on the same sample: keep one so truth stays strictly increasing
    keep = np.ones(peaks.size, dtype=bool)
    keep[1:] = np.diff(peaks) > 0
    peaks, ids = peaks[keep], ids[keep]
    amps = rng_amp.uniform(0.9, 1.1, peaks.size)

    x = np.zeros(n)
    for s, k, a in zip(peaks.tolist(), ids.tolist(), amps.tolist()):
        tpl = templates[k]
        start = s - tpl.peak_index
        lo, hi = max(start, 0), min(start + tpl.shape.size, n)
        x[lo:hi] += a * tpl.shape[lo - start:hi - start]

    if config.noise_sigma > 0:
        white = rng_noise.normal(0.0, config.noise_sigma, n)
        x += filter_array(white, fs, config.filter)
    return x, peaks, ids


def _package(x, peaks, ids, fs, meta) -> tuple[Recording, GroundTruth]:
    gt = GroundTruth(np.round(peaks * (1e6 / fs)).astype(np.int64), ids)
    return Recording(x.astype(np.float32), fs, meta), gt


def generate(config: GeneratorConfig) -> tuple[Recording, GroundTruth]:
    """Simulate one recording and its ground-truth spike peak times."""
    x, peaks, ids = _simulate(config)
    meta = {"seed": int(config.seed), "noise_sigma": float(config.noise_sigma),
            "generator_version": GENERATOR_VERSION}
    return _package(x, peaks, ids, config.sample_rate_hz, meta)


def generate_mixed(config: GeneratorConfig, sigmas) -> tuple[Recording, GroundTruth]:
    """One recording made of equal-length segments, one per noise level in ``sigmas``.

    ``config.duration_s`` is the total length.  Segment ``i`` is simulated
    with a seed derived from ``(config.seed, i)``.
    """
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        raise ConfigError("sigmas must be non-empty")
    seg = config.duration_s / len(sigmas)
    seeds = np.random.SeedSequence(int(config.seed)).generate_state(len(sigmas), dtype=np.uint64)
    xs, ps, ids = [], [], []
    offset = 0
    for sigma, seed in zip(sigmas, seeds.tolist()):
        x, p, k = _simulate(replace(config, noise_sigma=sigma, duration_s=seg, seed=int(seed)))
        xs.append(x)
        ps.append(p + offset)
        ids.append(k)
        offset += x.size
    meta = {"seed": int(config.seed), "noise_sigma": sigmas, "generator_version": GENERATOR_VERSION}
    return _package(np.concatenate(xs), np.concatenate(ps), np.concatenate(ids), config.sample_rate_hz, meta)


def recording_to_bytes(rec: Recording, gt: GroundTruth | None = None) -> bytes:
    gt = GroundTruth.empty() if gt is None else gt
    samples = np.asarray(rec.samples, dtype="<f4")
    header = {
        "sample_rate_hz": float(rec.sample_rate_hz),
        "num_samples": int(samples.size),
        "noise_sigma": rec.meta.get("noise_sigma"),
        "seed": rec.meta.get("seed"),
        "generator_version": rec.meta.get("generator_version"),
        "ground_truth_us": gt.spike_times_us.tolist(),
        "neuron_ids": gt.neuron_ids.tolist(),
    }
    return pack_container(NREC_MAGIC, NREC_VERSION, header, samples.tobytes())


def recording_from_bytes(data: bytes) -> tuple[Recording, GroundTruth]:
    header, payload, offset = unpack_container(data, NREC_MAGIC, NREC_VERSION)
    try:
        fs = float(header["sample_rate_hz"])
        num = int(header["num_samples"])
        gt_us = header["ground_truth_us"]
        nids = header["neuron_ids"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"NREC1 header missing or invalid field: {exc}", offset=6) from None
    need = 4 * num
    if len(payload) < need:
        raise TruncationError(f"header declares {num} samples ({need} bytes), payload has {len(payload)}",
                              offset=offset + len(payload))
    if len(payload) > need:
        raise FormatError(f"{len(payload) - need} trailing bytes after payload", offset=offset + need)
    samples = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    meta = {k: header.get(k) for k in ("seed", "noise_sigma", "generator_version") if header.get(k) is not None}
    return Recording(samples, fs, meta), GroundTruth(np.asarray(gt_us, np.int64), np.asarray(nids, np.int64))


def write_recording(path, rec: Recording, gt: GroundTruth | None = None) -> None:
    atomic_write_bytes(path, recording_to_bytes(rec, gt))


def read_recording(path) -> tuple[Recording, GroundTruth]:
    with open(path, "rb") as fh:
        return recording_from_bytes(fh.read())

