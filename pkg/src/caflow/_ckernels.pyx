# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled column kernels; same signatures as the numpy versions."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint8_t, uint64_t, int64_t

from . import _kernels_py

cnp.import_array()


def build_columns(table, int k, int nb, int left, int n, bint packed):
    cdef const uint8_t[:] tab = np.ascontiguousarray(table, dtype=np.uint8)
    cdef int w = n * (nb - 1) + 1
    cdef int64_t total = 1
    cdef int i
    for i in range(w):
        total *= k
    cdef cnp.ndarray out_arr
    if packed:
        out_arr = np.zeros(total, dtype=np.uint64)
    else:
        out_arr = np.zeros((total, n + 1), dtype=np.uint8)
    cdef uint64_t[:] out_p
    cdef uint8_t[:, :] out_m
    if packed:
        out_p = out_arr
    else:
        out_m = out_arr
    cdef uint8_t[:] buf = np.zeros(w, dtype=np.uint8)
    cdef uint64_t[:] kpow = np.array([k ** j for j in range(n + 1)] if packed else [1], dtype=np.uint64)
    cdef int64_t top = 1
    for i in range(nb - 1):
        top *= k
    cdef int64_t idx, rem, code
    cdef int q, length, step, d
    cdef uint8_t old
    cdef uint64_t acc
    for idx in range(total):
        rem = idx
        for q in range(w - 1, -1, -1):
            buf[q] = rem % k
            rem //= k
        if packed:
            acc = buf[n * left]
        else:
            out_m[idx, 0] = buf[n * left]
        length = w
        for step in range(1, n + 1):
            code = 0
            for d in range(nb - 1):
                code = code * k + buf[d]
            for q in range(length - nb + 1):
                code = code * k + buf[q + nb - 1]
                old = buf[q]
                buf[q] = tab[code]
                code -= old * top
            length -= nb - 1
            if packed:
                acc += buf[(n - step) * left] * kpow[step]
            else:
                out_m[idx, step] = buf[(n - step) * left]
        if packed:
            out_p[idx] = acc
    return out_arr


cdef _weight_u64(uint64_t[:] old, int k, uint64_t[:, :] W, const uint8_t[:] check, bint has_check):
    cdef Py_ssize_t K = old.shape[0]
    cdef Py_ssize_t R = W.shape[0]
    new_arr = np.zeros(K, dtype=np.uint64)
    cdef uint64_t[:] new = new_arr
    cdef Py_ssize_t st, win, row
    cdef int s
    cdef uint64_t v
    for st in range(K):
        v = old[st]
        if v == 0:
            continue
        row = st % R
        for s in range(k):
            win = st * k + s
            if has_check and not check[win]:
                continue
            new[win % K] += v * W[row, s]
    return new_arr


cdef _weight_f64(double[:] old, int k, double[:, :] W, const uint8_t[:] check, bint has_check):
    cdef Py_ssize_t K = old.shape[0]
    cdef Py_ssize_t R = W.shape[0]
    new_arr = np.zeros(K, dtype=np.float64)
    cdef double[:] new = new_arr
    cdef Py_ssize_t st, win, row
    cdef int s
    cdef double v
    for st in range(K):
        v = old[st]
        if v == 0.0:
            continue
        row = st % R
        for s in range(k):
            win = st * k + s
            if has_check and not check[win]:
                continue
            new[win % K] += v * W[row, s]
    return new_arr


_EMPTY = np.zeros(1, dtype=np.uint8)


def _mask(check):
    if check is None:
        return _EMPTY, False
    return np.ascontiguousarray(check, dtype=np.uint8), True


def weight_step(old, int k, W, check):
    m, has = _mask(check)
    if old.dtype == np.uint64:
        return _weight_u64(np.ascontiguousarray(old), k, np.ascontiguousarray(W, dtype=np.uint64), m, has)
    if old.dtype == np.float64:
        return _weight_f64(np.ascontiguousarray(old), k, np.ascontiguousarray(W, dtype=np.float64), m, has)
    return _kernels_py.weight_step(old, k, W, check)


def alive_step(old, int k, W, check):
    cdef const uint8_t[:] o = np.ascontiguousarray(old, dtype=np.uint8)
    cdef const uint8_t[:, :] w = np.ascontiguousarray(W, dtype=np.uint8)
    m, has_obj = _mask(check)
    cdef const uint8_t[:] c = m
    cdef bint has = has_obj
    cdef Py_ssize_t K = o.shape[0]
    cdef Py_ssize_t R = w.shape[0]
    new_arr = np.zeros(K, dtype=np.uint8)
    cdef uint8_t[:] new = new_arr
    cdef Py_ssize_t st, win, row
    cdef int s
    for st in range(K):
        if not o[st]:
            continue
        row = st % R
        for s in range(k):
            if not w[row, s]:
                continue
            win = st * k + s
            if has and not c[win]:
                continue
            new[win % K] = 1
    return new_arr.astype(bool)


def back_step(nxt, int k, W, check):
    cdef const uint8_t[:] nx = np.ascontiguousarray(nxt, dtype=np.uint8)
    cdef const uint8_t[:, :] w = np.ascontiguousarray(W, dtype=np.uint8)
    m, has_obj = _mask(check)
    cdef const uint8_t[:] c = m
    cdef bint has = has_obj
    cdef Py_ssize_t K = nx.shape[0]
    cdef Py_ssize_t R = w.shape[0]
    out_arr = np.zeros(K, dtype=np.uint8)
    cdef uint8_t[:] out = out_arr
    cdef Py_ssize_t st, win, row
    cdef int s
    for st in range(K):
        row = st % R
        for s in range(k):
            if not w[row, s]:
                continue
            win = st * k + s
            if has and not c[win]:
                continue
            if nx[win % K]:
                out[st] = 1
                break
    return out_arr.astype(bool)


def count_back_step(nxt, int k, W, check):
    return _kernels_py.count_back_step(nxt, k, W, check)
