# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs

cnp.import_array()


cdef inline long long _bin_time(long long b, double bin_us) nogil:
    return <long long>floor((b + 0.5) * bin_us + 0.5)


def bin_time_us(b, double bin_us):
    return int(_bin_time(b, bin_us))


def delta_modulate(samples, double th_on, double th_off, bint multi=True,
                   reference_out=None):
    cdef const double[::1] x = np.ascontiguousarray(samples, dtype=np.float64)
    cdef Py_ssize_t n_samp = x.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.empty(n_samp, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cnt = np.empty(n_samp, dtype=np.int64)
    cdef double[::1] ref
    cdef bint trace = reference_out is not None
    if trace:
        ref = reference_out
    if n_samp == 0:
        return idx[:0], cnt[:0]
    cdef double r = x[0]
    cdef double d, v
    cdef long long m
    cdef Py_ssize_t n, k = 0
    with nogil:
        for n in range(n_samp):
            v = x[n]
            d = v - r
            if d >= th_on:
                if multi:
                    m = <long long>floor(d / th_on)
                    while d - m * th_on >= th_on:
                        m += 1
                    r = r + m * th_on
                else:
                    m = 1
                    r = v
                idx[k] = n
                cnt[k] = m
                k += 1
            elif d <= th_off:
                if multi:
                    m = <long long>floor(d / th_off)
                    while d - m * th_off <= th_off:
                        m += 1
                    r = r + m * th_off
                else:
                    m = 1
                    r = v
                idx[k] = n
                cnt[k] = -m
                k += 1
            if trace:
                ref[n] = r
    return idx[:k].copy(), cnt[:k].copy()


def evspd_scan(bins, double bin_us, long long n_th, long long tau, double t_ref_us):
    cdef const long long[::1] b = np.ascontiguousarray(bins, dtype=np.int64)
    cdef Py_ssize_t nb = b.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(nb, dtype=np.int64)
    cdef Py_ssize_t i, lo = 0, k = 0
    cdef long long t, last_t = 0
    cdef bint have_last = False
    with nogil:
        for i in range(nb):
            while b[lo] < b[i] - tau:
                lo += 1
            if have_last:
                t = _bin_time(b[i], bin_us)
                if t - last_t < t_ref_us:
                    continue
            if i - lo + 1 >= n_th:
                out[k] = b[i]
                k += 1
                last_t = _bin_time(b[i], bin_us)
                have_last = True
    return out[:k].copy()


def evspd_triggers(bins, long long n_th, long long tau):
    cdef const long long[::1] b = np.ascontiguousarray(bins, dtype=np.int64)
    cdef Py_ssize_t nb = b.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(nb, dtype=np.int64)
    cdef Py_ssize_t i, lo = 0, k = 0
    with nogil:
        for i in range(nb):
            while b[lo] < b[i] - tau:
                lo += 1
            if i - lo + 1 >= n_th:
                out[k] = b[i]
                k += 1
    return out[:k].copy()


def refractory_gate(times_us, double t_ref_us, mask=None):
    cdef const long long[::1] t = np.ascontiguousarray(times_us, dtype=np.int64)
    cdef Py_ssize_t n = t.shape[0]
    cdef const unsigned char[::1] m
    if mask is None:
        m = np.ones(n, dtype=np.uint8)
    else:
        m = np.ascontiguousarray(mask, dtype=bool).view(np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t i, k = 0
    cdef long long last_t = 0
    cdef bint have_last = False
    with nogil:
        for i in range(n):
            if not m[i]:
                continue
            if have_last and t[i] - last_t < t_ref_us:
                continue
            out[k] = i
            k += 1
            last_t = t[i]
            have_last = True
    return out[:k].copy()


def greedy_match(det_us, gt_us, double delta_us):
    cdef const long long[::1] d = np.ascontiguousarray(det_us, dtype=np.int64)
    cdef const long long[::1] g = np.ascontiguousarray(gt_us, dtype=np.int64)
    cdef Py_ssize_t nd = d.shape[0], ng = g.shape[0]
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] used = np.zeros(ng, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] di = np.empty(nd, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] gi = np.empty(nd, dtype=np.int64)
    cdef Py_ssize_t i, j, lo = 0, best, k = 0
    cdef long long dist, best_dist
    with nogil:
        for i in range(nd):
            while lo < ng and g[lo] < d[i] - delta_us:
                lo += 1
            best = -1
            best_dist = 0
            j = lo
            while j < ng and g[j] <= d[i] + delta_us:
                if not used[j]:
                    dist = g[j] - d[i]
                    if dist < 0:
                        dist = -dist
                    if best < 0 or dist < best_dist:
                        best = j
                        best_dist = dist
                j += 1
            if best >= 0:
                used[best] = 1
                di[k] = i
                gi[k] = best
                k += 1
    return di[:k].copy(), gi[:k].copy()
