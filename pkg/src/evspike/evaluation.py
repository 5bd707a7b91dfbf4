"""Ground-truth matching with detection metrics, plus compression accounting."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .core import DetectionSet, GroundTruth, atomic_write_text
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class MatchConfig:
    delta_t_us: float = 500.0

    def __post_init__(self):
        if not self.delta_t_us > 0:
            raise ConfigError("delta_t_us > 0 violated")


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    sensitivity: float
    fdr: float
    accuracy: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> MetricsReport:
        # empty-denominator conventions: a silent detector on a silent channel is perfect
        s = tp / (tp + fn) if tp + fn else 1.0
        fdr = fp / (tp + fp) if tp + fp else 0.0
        acc = tp / (tp + fp + fn) if tp + fp + fn else 1.0
        return cls(int(tp), int(fp), int(fn), s, fdr, acc)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CompressionReport:
    total_pcm_events: int
    detected_spikes: int
    events_per_spike: float | None
    compression_ratio: float | None

    @property
    def defined(self) -> bool:
        return self.compression_ratio is not None


def _as_times(x) -> np.ndarray:
    if isinstance(x, DetectionSet):
        return x.times_us
    if isinstance(x, GroundTruth):
        return x.spike_times_us
    return np.asarray(x, dtype=np.int64)


def match_pairs(detections, gt, cfg: MatchConfig = MatchConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Matched ``(detection_index, truth_index)`` pairs under the greedy rule."""
    d = _as_times(detections)
    g = _as_times(gt)
    for name, arr in (("detections", d), ("ground truth", g)):
        bad = np.flatnonzero(np.diff(arr) < 0)
        if bad.size:
            raise DataError(f"{name} not sorted at index {bad[0] + 1}", index=int(bad[0] + 1))
    return kernels.greedy_match(d, g, cfg.delta_t_us)


def match(detections, gt, cfg: MatchConfig = MatchConfig()) -> MetricsReport:
    """Score detections against truth with one-to-one matching inside +/- delta_t.

    Detections are visited in time order and each claims the nearest
    unmatched truth spike with ``|d - t| <= delta_t``.
    """
    di, _ = match_pairs(detections, gt, cfg)
    tp = int(di.size)
    return MetricsReport.from_counts(tp, _as_times(detections).size - tp, _as_times(gt).size - tp)


def compression(total_events, detected, packet_bits_event: int = 32,
                packet_bits_spike: int = 32) -> CompressionReport:
    """Event-stream vs spike-only transmission ratio.

    ``total_events`` is a PCM series (its summed ON/OFF counts are used) or an
    integer; ``detected`` is a DetectionSet or an integer.
    """
    n_ev = total_events.total_events() if hasattr(total_events, "total_events") else int(total_events)
    n_sp = len(detected) if isinstance(detected, DetectionSet) else int(detected)
    if n_ev == 0:
        return CompressionReport(0, n_sp, 0.0 if n_sp else None, 0.0)
    if n_sp == 0:
        return CompressionReport(n_ev, 0, None, None)
    eps = n_ev / n_sp
    ratio = (n_ev * packet_bits_event) / (n_sp * packet_bits_spike)
    return CompressionReport(n_ev, n_sp, eps, ratio)


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, np.generic):
        return v.item()
    return v


def metrics_record(detector: str, params: dict, report: MetricsReport,
                   s_pcm: float | None = None, compression_ratio: float | None = None) -> dict:
    """The JSON metrics document for one detector run."""
    rec = {"detector": detector, "params": {k: _clean(v) for k, v in params.items()}}
    rec.update(report.as_dict())
    rec["s_pcm"] = _clean(s_pcm)
    rec["compression_ratio"] = _clean(compression_ratio)
    return rec


def write_metrics(path, record: dict) -> None:
    atomic_write_text(path, json.dumps(record, sort_keys=True, indent=2) + "\n")


def read_metrics(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


SUMMARY_FIELDS = ("detector", "params", "tp", "fp", "fn", "sensitivity", "fdr", "accuracy",
                  "s_pcm", "compression_ratio")


def summary_csv(records: list[dict]) -> str:
    """Flat CSV of metrics records plus one mean row per detector."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)

    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return f"{v:.6g}"
        return v

    by_det: dict[str, list[dict]] = {}
    for r in records:
        by_det.setdefault(r["detector"], []).append(r)
        params = json.dumps(r.get("params", {}), sort_keys=True, separators=(",", ":"))
        w.writerow([fmt(r.get(k)) if k != "params" else params for k in SUMMARY_FIELDS])
    for det in sorted(by_det):
        rows = by_det[det]
        row = [det, "mean"]
        for k in SUMMARY_FIELDS[2:]:
            vals = [r[k] for r in rows if r.get(k) is not None]
            row.append(fmt(float(np.mean(vals))) if vals else "")
        w.writerow(row)
    return buf.getvalue()
