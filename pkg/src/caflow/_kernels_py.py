"""Numpy implementations of the column kernels.

These are the reference versions; the compiled module mirrors their
signatures exactly. The DP state is the last ``S`` symbols in base k, oldest
digit most significant, so appending symbol ``s`` to state ``st`` gives the
window index ``st*k + s`` and the next state ``(st*k + s) % K``.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 1 << 15


def build_columns(table, k, nb, left, n, packed):
    """Space-time column of every window of width ``w = n*(nb-1) + 1``.

    ``table`` is the compact rule over ``nb`` consecutive offsets, ``left``
    the number of those offsets left of 0. Row ``idx`` describes the window
    whose base-k expansion is ``idx``; its entry ``i`` is the value of the
    reference cell after ``i`` steps. Packed output stores
    ``sum_i col[i] * k**i`` as uint64.
    """
    table = np.asarray(table, dtype=np.uint8)
    w = n * (nb - 1) + 1
    total = k**w
    if packed:
        out = np.zeros(total, dtype=np.uint64)
        weights = np.array([k**i for i in range(n + 1)], dtype=np.uint64)
    else:
        out = np.zeros((total, n + 1), dtype=np.uint8)
    powers = k ** np.arange(w - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        cells = ((idx[:, None] // powers[None, :]) % k).astype(np.uint8)
        cols = np.empty((idx.size, n + 1), dtype=np.uint8)
        cols[:, 0] = cells[:, n * left]
        for i in range(1, n + 1):
            L = cells.shape[1] - nb + 1
            code = np.zeros((idx.size, L), dtype=np.int64)
            for d in range(nb):
                code *= k
                code += cells[:, d : d + L]
            cells = table[code]
            cols[:, i] = cells[:, (n - i) * left]
        if packed:
            out[start : start + idx.size] = cols.astype(np.uint64) @ weights
        else:
            out[start : start + idx.size] = cols
    return out


def _rows(K, R):
    return np.arange(K) % R if R > 1 else np.zeros(K, dtype=np.int64)


def weight_step(old, k, W, check):
    """Forward step accumulating ``old[st] * W[st % R, s]`` into the next state.

    Works for uint64 counts, float64 weights and object (big integer) counts.
    ``check`` is a boolean mask over window indices or ``None``.
    """
    K = old.shape[0]
    R = W.shape[0]
    ext = old[:, None] * W[_rows(K, R)]
    ext = ext.reshape(-1)
    if check is not None:
        ext = np.where(check, ext, ext.dtype.type(0) if ext.dtype != object else 0)
    return ext.reshape(k, K).sum(axis=0)


def alive_step(old, k, W, check):
    """Boolean forward step: next states reachable from some live state."""
    K = old.shape[0]
    R = W.shape[0]
    ext = (old[:, None] & W[_rows(K, R)]).reshape(-1)
    if check is not None:
        ext &= check
    return ext.reshape(k, K).any(axis=0)


def back_step(nxt, k, W, check):
    """Boolean backward step: states with some admissible continuation."""
    K = nxt.shape[0]
    R = W.shape[0]
    ext = (W[_rows(K, R)].reshape(-1)) & np.tile(nxt, k)
    if check is not None:
        ext &= check
    return ext.reshape(K, k).any(axis=1)


def count_back_step(nxt, k, W, check):
    """Counting backward step (float64), used to sample uniform completions."""
    K = nxt.shape[0]
    R = W.shape[0]
    ext = W[_rows(K, R)].reshape(-1).astype(float) * np.tile(nxt, k)
    if check is not None:
        ext = np.where(check, ext, 0.0)
    return ext.reshape(K, k).sum(axis=1)
