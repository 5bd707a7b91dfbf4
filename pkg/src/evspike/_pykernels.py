"""Pure-Python implementations of the hot loops.

These mirror ``_ckernels.pyx`` one-for-one and are used when the compiled
extension is unavailable (or when ``EVSPIKE_PURE_PYTHON=1``).  Both backends
must produce identical outputs; ``tests/test_kernels.py`` checks this.
"""
import math

import numpy as np


def bin_time_us(b, bin_us):
    """Center time of bin ``b`` in whole microseconds."""
    return int(math.floor((b + 0.5) * bin_us + 0.5))


def delta_modulate(samples, th_on, th_off, multi=True, reference_out=None):
    """Delta-modulate ``samples`` against ON/OFF thresholds.

    Returns ``(index, count)``: sample indices that emitted pulses and the
    signed pulse count at each (positive = ON, negative = OFF).  When
    ``reference_out`` is given it receives the tracked reference after each
    sample.
    """
    x = np.asarray(samples, dtype=np.float64).tolist()
    idx = []
    cnt = []
    if not x:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    r = x[0]
    for n, v in enumerate(x):
        d = v - r
        if d >= th_on:
            if multi:
                m = int(math.floor(d / th_on))
                while d - m * th_on >= th_on:
                    m += 1
                r = r + m * th_on
            else:
                m = 1
                r = v
            idx.append(n)
            cnt.append(m)
        elif d <= th_off:
            if multi:
                m = int(math.floor(d / th_off))
                while d - m * th_off <= th_off:
                    m += 1
                r = r + m * th_off
            else:
                m = 1
                r = v
            idx.append(n)
            cnt.append(-m)
        if reference_out is not None:
            reference_out[n] = r
    return np.asarray(idx, dtype=np.int64), np.asarray(cnt, dtype=np.int64)


def evspd_scan(bins, bin_us, n_th, tau, t_ref_us):
    """Ev-SPD over the sorted indices of non-zero PCM bins.

    A bin triggers when at least ``n_th`` non-zero bins lie in ``[b - tau, b]``
    and it is outside the refractory span of the previous detection.
    """
    b_list = np.asarray(bins, dtype=np.int64).tolist()
    out = []
    lo = 0
    last_t = None
    for i, b in enumerate(b_list):
        while b_list[lo] < b - tau:
            lo += 1
        if last_t is not None and bin_time_us(b, bin_us) - last_t < t_ref_us:
            continue
        if i - lo + 1 >= n_th:
            out.append(b)
            last_t = bin_time_us(b, bin_us)
    return np.asarray(out, dtype=np.int64)


def evspd_triggers(bins, n_th, tau):
    """Bins meeting the Ev-SPD window condition, ignoring refractoriness."""
    b_list = np.asarray(bins, dtype=np.int64).tolist()
    out = []
    lo = 0
    for i, b in enumerate(b_list):
        while b_list[lo] < b - tau:
            lo += 1
        if i - lo + 1 >= n_th:
            out.append(b)
    return np.asarray(out, dtype=np.int64)


def refractory_gate(times_us, t_ref_us, mask=None):
    """Greedy refractory filter: indices of accepted events in time order.

    Only events with ``mask[i]`` true are eligible; an eligible event is
    accepted when at least ``t_ref_us`` has elapsed since the last accepted one.
    """
    t = np.asarray(times_us, dtype=np.int64).tolist()
    m = [True] * len(t) if mask is None else np.asarray(mask, dtype=bool).tolist()
    out = []
    last_t = None
    for i, ti in enumerate(t):
        if not m[i]:
            continue
        if last_t is not None and ti - last_t < t_ref_us:
            continue
        out.append(i)
        last_t = ti
    return np.asarray(out, dtype=np.int64)


def greedy_match(det_us, gt_us, delta_us):
    """One-to-one greedy matching of sorted detections to sorted truth.

    Each detection, in time order, takes the nearest still-unmatched truth
    time within ``|d - g| <= delta_us``; ties go to the earlier truth.
    Returns matched ``(det_index, gt_index)`` arrays.
    """
    d = np.asarray(det_us, dtype=np.int64).tolist()
    g = np.asarray(gt_us, dtype=np.int64).tolist()
    used = [False] * len(g)
    di, gi = [], []
    lo = 0
    for i, t in enumerate(d):
        while lo < len(g) and g[lo] < t - delta_us:
            lo += 1
        best = -1
        best_dist = 0
        j = lo
        while j < len(g) and g[j] <= t + delta_us:
            if not used[j]:
                dist = abs(g[j] - t)
                if best < 0 or dist < best_dist:
                    best = j
                    best_dist = dist
            j += 1
        if best >= 0:
            used[best] = True
            di.append(i)
            gi.append(best)
    return np.asarray(di, dtype=np.int64), np.asarray(gi, dtype=np.int64)
