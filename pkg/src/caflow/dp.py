"""Sliding-column dynamic program over space-time cones.

A rule whose effective neighborhood is ``[lo, hi]`` (widened to contain 0)
determines the column ``(F^i y)_j, i = 0..n`` from the cells
``[j + n*lo, j + n*hi]``. Scanning a word left to right while remembering
the last ``S = n*(hi - lo)`` symbols, the column of ``j`` becomes known the
moment cell ``j + n*hi`` is appended. Trace constraints are therefore masks
over window indices, checked one position at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .rules import LocalRule

__all__ = [
    "BudgetExceeded",
    "Columns",
    "DEFAULT_BUDGET",
    "Program",
    "columns_for",
    "trace_program",
]

DEFAULT_BUDGET = 1 << 24


class BudgetExceeded(RuntimeError):
    """An exact computation would exceed the configured state budget."""


@dataclass(frozen=True, eq=False)
class Columns:
    """Column of every window of the n-step cone of a rule."""

    k: int
    n: int
    lo: int
    hi: int
    data: np.ndarray
    packed: bool

    @property
    def w(self) -> int:
        return self.n * (self.hi - self.lo) + 1

    @property
    def S(self) -> int:
        return self.w - 1

    def encode(self, column) -> object:
        column = np.asarray(column, dtype=np.int64)
        if self.packed:
            return np.uint64(sum(int(v) * self.k**i for i, v in enumerate(column)))
        return column.astype(np.uint8)

    def mask(self, column) -> np.ndarray:
        """Boolean mask of windows whose column equals ``column``."""
        target = self.encode(column)
        if self.packed:
            return self.data == target
        return np.all(self.data == target[None, :], axis=1)

    def column_of(self, cells) -> np.ndarray:
        """Column produced by a concrete window of ``w`` cells."""
        idx = 0
        for c in np.asarray(cells).tolist():
            idx = idx * self.k + int(c)
        if self.packed:
            code = int(self.data[idx])
            return np.array([(code // self.k**i) % self.k for i in range(self.n + 1)], dtype=np.uint8)
        return self.data[idx].copy()


def _fits_packed(k: int, n: int) -> bool:
    return (n + 1) * math.log2(k) <= 63.5 and k ** (n + 1) <= 2**64


@lru_cache(maxsize=64)
def _columns_cached(rule: LocalRule, n: int) -> Columns:
    lo, hi = rule.cone_span
    packed = _fits_packed(rule.k, n)
    data = kernels.build_columns(rule.compact_table(), rule.k, hi - lo + 1, -lo, n, packed)
    data.setflags(write=False)
    return Columns(rule.k, n, lo, hi, data, packed)


def columns_for(rule: LocalRule, n: int, budget: int = DEFAULT_BUDGET) -> Columns:
    lo, hi = rule.cone_span
    w = n * (hi - lo) + 1
    if rule.k**w > budget:
        raise BudgetExceeded(
            f"{rule.k}^{w} cone windows exceed the state budget {budget}"
        )
    return _columns_cached(rule, n)


def _is_iid(chain) -> bool:
    if chain is None:
        return True
    pi, P = chain
    return bool(np.allclose(P, pi[None, :], rtol=0, atol=1e-15))


class Program:
    """Positions ``0..N-1`` with optional symbol and window constraints.

    ``checks[t]`` masks window indices ``st*k + s`` at position ``t`` (only
    allowed once ``t >= S``); ``allowed[t]`` masks symbols. ``chain`` is a
    ``(pi, P)`` pair whose support restricts the words and whose values
    weight them in :meth:`log_weight`.
    """

    def __init__(
        self,
        k: int,
        S: int,
        checks: Sequence[Optional[np.ndarray]],
        allowed: Sequence[Optional[np.ndarray]] | None = None,
        chain=None,
    ):
        N = len(checks)
        allowed = list(allowed) if allowed is not None else [None] * N
        if len(allowed) != N:
            raise ValueError("checks and allowed must have equal length")
        for t, c in enumerate(checks):
            if c is not None and t < S:
                raise ValueError("a window check needs S earlier positions")
        markov = not _is_iid(chain)
        if S == 0:
            # one-cell windows are plain symbol constraints
            merged = []
            for a, c in zip(allowed, checks):
                if c is None:
                    merged.append(a)
                else:
                    c = np.asarray(c, dtype=bool)
                    merged.append(c if a is None else (np.asarray(a, dtype=bool) & c))
            allowed, checks = merged, [None] * N
            if markov:
                # the state must remember the previous symbol
                S = 1
        self.k = k
        self.S = S
        self.K = k**S
        self.checks = list(checks)
        self.allowed = allowed
        self.chain = chain
        self.markov = markov

    def __len__(self) -> int:
        return len(self.checks)

    # weight matrices, shape (R, k) with R in {1, k}
    def _base(self, t: int) -> np.ndarray:
        k = self.k
        if self.chain is None:
            W = np.ones((1, k))
        else:
            pi, P = self.chain
            W = pi[None, :] if (t == 0 or not self.markov) else P
        W = np.array(W, dtype=float)
        a = self.allowed[t]
        if a is not None:
            W = W * np.asarray(a, dtype=bool)[None, :]
        return W

    def support(self, t: int) -> np.ndarray:
        return self._base(t) > 0

    def _count_dtype(self):
        return np.uint64 if len(self) * math.log2(self.k) < 63 else object

    def count(self) -> int:
        """Number of words satisfying every constraint."""
        dtype = self._count_dtype()
        v = np.zeros(self.K, dtype=dtype)
        v[0] = 1
        for t in range(len(self)):
            W = self.support(t).astype(np.uint64 if dtype is np.uint64 else object)
            v = kernels.weight_step(v, self.k, W, self.checks[t])
        return int(v.sum())

    def log_weight(self) -> float:
        """Natural log of the total chain weight of the satisfying words."""
        v = np.zeros(self.K)
        v[0] = 1.0
        acc = 0.0
        for t in range(len(self)):
            v = kernels.weight_step(v, self.k, self._base(t), self.checks[t])
            s = v.max()
            if s <= 0:
                return float("-inf")
            v /= s
            acc += math.log(s)
        return acc + math.log(v.sum())

    def backward(self, start: int = 0) -> list[np.ndarray]:
        """``B[t - start]``: states before position t that can still finish."""
        N = len(self)
        B = [np.ones(self.K, dtype=bool)]
        for t in range(N - 1, start - 1, -1):
            B.append(kernels.back_step(B[-1], self.k, self.support(t), self.checks[t]))
        return B[::-1]

    def feasible(self) -> bool:
        return bool(self.backward()[0][0])

    def projected_count(self, va: int, vb: int) -> int:
        """Distinct restrictions to positions ``va..vb`` of the satisfying words."""
        N, k, S = len(self), self.k, self.S
        va, vb = max(va, 0), min(vb, N - 1)
        if va > vb:
            return int(self.feasible())
        B = np.ones(self.K, dtype=bool)
        for t in range(N - 1, vb, -1):
            B = kernels.back_step(B, k, self.support(t), self.checks[t])
        dtype = self._count_dtype()
        wtype = np.uint64 if dtype is np.uint64 else object
        if va == 0:
            cnt = np.zeros(self.K, dtype=dtype)
            cnt[0] = 1
            first = 0
        else:
            alive = np.zeros(self.K, dtype=bool)
            alive[0] = True
            for t in range(va):
                alive = kernels.alive_step(alive, k, self.support(t), self.checks[t])
            # hidden digits stay in the state until position va + S - 1
            last_alive = min(vb, va + S - 1)
            for t in range(va, last_alive + 1):
                alive = kernels.alive_step(alive, k, self.support(t), self.checks[t])
            if vb < va + S - 1:
                m = vb - va + 1
                live = np.nonzero(alive & B)[0]
                return int(np.unique(live % k**m).size)
            cnt = alive.astype(dtype)
            first = last_alive + 1
        for t in range(first, vb + 1):
            cnt = kernels.weight_step(cnt, k, self.support(t).astype(wtype), self.checks[t])
        return int((cnt * B.astype(wtype)).sum())

    def enumerate(self, limit: int) -> np.ndarray:
        """All satisfying words as rows; raises when more than ``limit``."""
        B = self.backward()
        k, K = self.k, self.K
        words = np.zeros((1, 0), dtype=np.uint8)
        states = np.zeros(1, dtype=np.int64)
        if not B[0][0]:
            return np.zeros((0, len(self)), dtype=np.uint8)
        for t in range(len(self)):
            sup = self.support(t)
            rows = states % sup.shape[0] if sup.shape[0] > 1 else np.zeros_like(states)
            win = states[:, None] * k + np.arange(k)[None, :]
            ok = sup[rows] & B[t + 1][win % K]
            if self.checks[t] is not None:
                ok &= self.checks[t][win]
            src, sym = np.nonzero(ok)
            if src.size > limit:
                raise BudgetExceeded(f"more than {limit} words to enumerate")
            words = np.hstack([words[src], sym[:, None].astype(np.uint8)])
            states = win[src, sym] % K
        return words

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Words drawn uniformly from the satisfying set."""
        N, k, K = len(self), self.k, self.K
        C = [np.ones(K)]
        for t in range(N - 1, -1, -1):
            nxt = C[-1]
            C.append(kernels.count_back_step(nxt / max(nxt.max(), 1e-300), k, self.support(t), self.checks[t]))
        C = C[::-1]
        if C[0][0] <= 0:
            raise ValueError("no word satisfies the constraints")
        states = np.zeros(size, dtype=np.int64)
        out = np.empty((size, N), dtype=np.uint8)
        for t in range(N):
            sup = self.support(t)
            rows = states % sup.shape[0] if sup.shape[0] > 1 else np.zeros_like(states)
            win = states[:, None] * k + np.arange(k)[None, :]
            wts = sup[rows] * C[t + 1][win % K]
            if self.checks[t] is not None:
                wts = wts * self.checks[t][win]
            cum = np.cumsum(wts, axis=1)
            u = rng.random(size) * cum[:, -1]
            sym = np.minimum((u[:, None] >= cum).sum(axis=1), k - 1)
            out[:, t] = sym
            states = win[np.arange(size), sym] % K
        return out


def trace_program(
    columns: Columns,
    rule_k: int,
    trace_rows: np.ndarray,
    chain=None,
    pad_left: int = 0,
    pad_right: int = 0,
) -> Program:
    """Program whose words are the cone words reproducing ``trace_rows``.

    Position 0 is coordinate ``-p + n*lo - pad_left``; the padding adds
    unconstrained cells, which matters only when the measure restricts
    which neighbors may follow each other.
    """
    p = (trace_rows.shape[1] - 1) // 2
    S = columns.S
    checks: list = [None] * (pad_left + S)
    for j in range(-p, p + 1):
        checks.append(columns.mask(trace_rows[:, j + p]))
    checks += [None] * pad_right
    return Program(rule_k, S, checks, None, chain)
