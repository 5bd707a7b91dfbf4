"""Event-based spike detector (Ev-SPD).

A non-zero PCM bin ``b`` is flagged as a spike when at least ``n_th``
non-zero bins lie in the causal window ``[b - tau_bins, b]``.  After a
detection the detector stops evaluating for ``t_ref_us``; bins inside that
span still count toward later windows.
"""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import DetectionSet, GroundTruth, atomic_write_text
from .encoder import PcmSeries
from .errors import ConfigError
from .evaluation import MatchConfig, MetricsReport, match


@dataclass(frozen=True)
class EvSpdConfig:
    n_th: int = 5
    tau_bins: int = 11
    t_ref_us: float = 1000.0

    def __post_init__(self):
        if self.n_th < 1 or self.tau_bins < 1:
            raise ConfigError("n_th and tau_bins must be positive integers")
        if self.n_th > self.tau_bins + 1:
            raise ConfigError(f"n_th <= tau_bins + 1 violated (n_th={self.n_th}, tau_bins={self.tau_bins})")
        if not self.t_ref_us > 0:
            raise ConfigError("t_ref_us > 0 violated")


def detect_ev(pcm: PcmSeries, cfg: EvSpdConfig = EvSpdConfig(), channel_id: int = 0) -> DetectionSet:
    """Run Ev-SPD; detections are stamped at the center of the triggering bin."""
    bins = kernels.evspd_scan(pcm.bins, pcm.bin_us, cfg.n_th, cfg.tau_bins, cfg.t_ref_us)
    return DetectionSet(pcm.bin_times_us(bins), channel_id, "ev")


def trigger_bins(pcm: PcmSeries, n_th: int, tau_bins: int) -> np.ndarray:
    """Bins satisfying the window condition, before refractory gating."""
    return kernels.evspd_triggers(pcm.bins, n_th, tau_bins)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("EVSPIKE_THREADS", "1")))
    except ValueError:
        return 1


def sweep_ev(pcm: PcmSeries, gt: GroundTruth, n_th_range, tau_range, t_ref_us: float = 1000.0,
             match_cfg: MatchConfig = MatchConfig()) -> dict[tuple[int, int], MetricsReport | None]:
    """Metrics for every ``(n_th, tau)`` pair; invalid pairs map to ``None``."""
    pairs = [(int(n), int(t)) for n in n_th_range for t in tau_range]

    def cell(pair):
        n, t = pair
        if n > t + 1:
            return None
        return match(detect_ev(pcm, EvSpdConfig(n, t, t_ref_us)), gt, match_cfg)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(cell, pairs))
    return dict(zip(pairs, results))


HEATMAP_FIELDS = ("n_th", "tau", "sensitivity", "fdr", "accuracy")


def heatmap_csv(grid: dict[tuple[int, int], MetricsReport | None]) -> str:
    """Heatmap CSV; skipped pairs appear as ``#`` comment lines after the data."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEATMAP_FIELDS)
    skipped = []
    for (n, t), rep in grid.items():
        if rep is None:
            skipped.append((n, t))
            continue
        w.writerow((n, t, f"{rep.sensitivity:.6f}", f"{rep.fdr:.6f}", f"{rep.accuracy:.6f}"))
    for n, t in skipped:
        buf.write(f"# skipped n_th={n} tau={t}: n_th > tau + 1\n")
    return buf.getvalue()


def write_heatmap(path, grid) -> None:
    atomic_write_text(path, heatmap_csv(grid))


def read_heatmap(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    return [{"n_th": int(r["n_th"]), "tau": int(r["tau"]), "sensitivity": float(r["sensitivity"]),
             "fdr": float(r["fdr"]), "accuracy": float(r["accuracy"])} for r in rows]
