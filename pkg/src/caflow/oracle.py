"""Brute-force ground truth for tiny instances.

Everything here works by definition: enumerate every word on the symmetric
cone (widened to the observation window), evolve each with a plain
full-radius loop, keep the words reproducing the trace. Nothing is shared
with the column DP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .measures import Bernoulli, Markov, MeasureModel, Uniform
from .rules import LocalRule, Window, elementary_rule, format_words

__all__ = [
    "OracleResult",
    "SuiteReport",
    "differential_suite",
    "enumerate_class",
    "lyapunov_brute",
]

ORACLE_BUDGET = 1 << 22


def _evolve_rows(rule: LocalRule, words: np.ndarray) -> np.ndarray:
    """One full-radius step applied row by row via explicit neighborhood codes."""
    k, w = rule.k, 2 * rule.radius + 1
    m, L = words.shape
    out = np.empty((m, L - w + 1), dtype=np.uint8)
    for q in range(L - w + 1):
        code = np.zeros(m, dtype=np.int64)
        for d in range(w):
            code = code * k + words[:, q + d]
        out[:, q] = rule.table[code]
    return out


def _traces(rule: LocalRule, words: np.ndarray, offset: int, p: int, n: int) -> np.ndarray:
    """Traces of words placed at ``offset``; rows must cover ``[-p-rn, p+rn]``."""
    r = rule.radius
    out = np.empty((words.shape[0], n + 1, 2 * p + 1), dtype=np.uint8)
    cur, cur_off = words, offset
    for i in range(n + 1):
        out[:, i, :] = cur[:, -p - cur_off : p - cur_off + 1]
        if i < n:
            cur = _evolve_rows(rule, cur)
            cur_off += r
    return out


def _all_words(k: int, length: int) -> np.ndarray:
    idx = np.arange(k**length, dtype=np.int64)
    powers = k ** np.arange(length - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] // powers[None, :]) % k).astype(np.uint8)


@dataclass(frozen=True)
class OracleResult:
    rule_label: str
    measure_label: str
    x: Window
    p: int
    n: int
    G: tuple[int, int]
    words: np.ndarray = field(repr=False)
    count: int
    class_measure: float
    word_log_measures: np.ndarray = field(repr=False)
    x_log_measure: float

    def dump(self) -> str:
        return format_words(self.words)

    def filtered_count(self, eta: float, h_ref: float, tol: float = 1e-9) -> int:
        """Words with ``|-log mu(w)/L - h_ref| <= eta``; the base point's word always counts."""
        L = self.words.shape[1]
        with np.errstate(invalid="ignore"):
            dev = np.abs(-self.word_log_measures / L - h_ref)
        kept = int(np.sum(dev <= eta + tol))
        x_dev = abs(-self.x_log_measure / L - h_ref)
        if not x_dev <= eta + tol:
            kept += 1
        return max(kept, 1)

    def integrand(self, eta: Optional[float] = None, h_ref: Optional[float] = None) -> float:
        """``1 - log #<T> / (-log mu(x on the window))`` clamped to [0, 1]."""
        count = self.count if eta is None else self.filtered_count(eta, h_ref)
        denom = -self.x_log_measure
        val = 1.0 - math.log(count) / denom
        return min(1.0, max(0.0, val))


def enumerate_class(rule: LocalRule, m: MeasureModel, x: Window, p: int, n: int,
                    G: tuple[int, int], budget: int = ORACLE_BUDGET) -> OracleResult:
    """Enumerate the trace class of ``x`` word by word."""
    reach = p + rule.radius * n
    g_minus, g_plus = G
    lo = min(-reach, -g_minus - p)
    hi = max(reach, g_plus + p)
    L = hi - lo + 1
    if rule.k**L > budget:
        raise RuntimeError(f"{rule.k}^{L} words exceed the oracle budget")
    target = np.empty((n + 1, 2 * p + 1), dtype=np.uint8)
    cur = x.segment(-reach, reach)[None, :]
    for i in range(n + 1):
        off = -reach + rule.radius * i
        target[i] = cur[0, -p - off : p - off + 1]
        if i < n:
            cur = _evolve_rows(rule, cur)
    words = _all_words(rule.k, L)
    logm = m.log_measure_rows(words)
    words, logm = words[np.isfinite(logm)], logm[np.isfinite(logm)]
    cone = words[:, -reach - lo : reach - lo + 1]
    match = np.all(_traces(rule, cone, -reach, p, n) == target[None], axis=(1, 2))
    measure = float(np.exp(logm[match]).sum())
    g_lo, g_hi = -g_minus - p, g_plus + p
    seen = np.unique(words[match][:, g_lo - lo : g_hi - lo + 1], axis=0)
    return OracleResult(
        rule_label=rule.label,
        measure_label=m.label,
        x=x,
        p=p,
        n=n,
        G=(g_minus, g_plus),
        words=seen,
        count=int(seen.shape[0]),
        class_measure=measure,
        word_log_measures=m.log_measure_rows(seen),
        x_log_measure=m.log_measure(x.segment(g_lo, g_hi)),
    )


def lyapunov_brute(rule: LocalRule, x: Window, n: int) -> tuple[int, int]:
    """``(I+, I-)`` by trying every assignment beyond each candidate cut."""
    r = rule.radius
    reach = r * n

    def minus(rule_, x_):
        for s in range(0, reach + 1):
            free = reach - s
            if free == 0:
                return s
            lo = -2 * reach
            base = x_.segment(lo, reach)
            words = np.tile(base, (rule_.k**free, 1))
            words[:, s + 1 - lo :] = _all_words(rule_.k, free)
            cur_x, cur = base[None, :], words
            ok = True
            for i in range(1, n + 1):
                cur_x, cur = _evolve_rows(rule_, cur_x), _evolve_rows(rule_, cur)
                off = lo + r * i
                if np.any(cur[:, : 1 - off] != cur_x[:, : 1 - off]):
                    ok = False
                    break
            if ok:
                return s
        return reach

    return minus(rule.mirror(), x.mirror()), minus(rule, x)


@dataclass
class SuiteReport:
    instances: int = 0
    exact_checks: int = 0
    exact_mismatches: list = field(default_factory=list)
    mc_cells: int = 0
    mc_within: int = 0
    seed_entropy: Optional[int] = None

    @property
    def mc_fraction(self) -> float:
        return self.mc_within / self.mc_cells if self.mc_cells else 1.0

    @property
    def passed(self) -> bool:
        return not self.exact_mismatches and self.mc_fraction >= 0.95

    def to_dict(self) -> dict:
        return {
            "instances": self.instances,
            "exact_checks": self.exact_checks,
            "exact_mismatches": self.exact_mismatches,
            "mc_cells": self.mc_cells,
            "mc_within_4sigma": self.mc_within,
            "mc_fraction": self.mc_fraction,
            "passed": self.passed,
        }


def _random_measure(k: int, rng: np.random.Generator) -> MeasureModel:
    kind = rng.integers(0, 3)
    if kind == 0:
        return Uniform(k)
    if kind == 1:
        probs = rng.dirichlet(np.full(k, 2.0))
        probs = np.round(probs, 6)
        probs[-1] = 1.0 - probs[:-1].sum()
        if probs[-1] <= 0:
            return Uniform(k)
        return Bernoulli(tuple(float(v) for v in probs))
    P = rng.dirichlet(np.full(k, 2.0), size=k)
    return Markov(tuple(tuple(float(v) for v in row) for row in P))


def _random_rule(k: int, r: int, rng: np.random.Generator) -> LocalRule:
    if k == 2 and r == 1 and rng.random() < 0.5:
        return elementary_rule(int(rng.integers(0, 256)))
    table = rng.integers(0, k, size=k ** (2 * r + 1))
    return LocalRule(rules_alphabet(k), r, table.astype(np.uint8), f"random_k{k}_r{r}")


def rules_alphabet(k: int):
    from .rules import Alphabet

    return Alphabet(k)


def differential_suite(instances: int, rng: np.random.Generator, *,
                       oracle_budget: int = 1 << 16, mc_samples: int = 4000,
                       delta: float = 0.25) -> SuiteReport:
    """Random small instances checked oracle vs DP (exact) and vs Monte Carlo."""
    from . import partitions as tp

    report = SuiteReport()
    done = 0
    while done < instances:
        k = int(rng.choice([2, 3, 4]))
        r = int(rng.choice([1, 2]))
        n = int(rng.integers(1, 5))
        p = int(rng.integers(0, 3))
        G = (int(rng.integers(0, r * n + 2)), int(rng.integers(0, r * n + 2)))
        reach = p + r * n
        L = max(reach, G[0] + p) + max(reach, G[1] + p) + 1
        if k**L > oracle_budget:
            continue
        rule = _random_rule(k, r, rng)
        m = _random_measure(k, rng)
        half = 2 * reach + max(G) + 1
        x = Window(-half, m.sample_words(2 * half + 1, rng, 1)[0])
        tag = f"{rule.label}|{m.label}|p={p}|n={n}|G={G}|x={x.word()}"
        orc = enumerate_class(rule, m, x, p, n, G, budget=oracle_budget)
        res = tp.count_T_exact(rule, m, x, p, n, G, with_histogram=True)
        filt = tp.build_delta_filter(m, p, n, G, delta)
        filtered = tp.count_T_filtered(res, filt, m).count_T
        checks = [
            ("count", orc.count, res.count_T),
            ("filtered", orc.filtered_count(filt.eta_n, filt.h_ref), filtered),
        ]
        for name, want, got in checks:
            report.exact_checks += 1
            if want != got:
                report.exact_mismatches.append(f"{name}: oracle {want} != dp {got} [{tag}]")
        report.exact_checks += 1
        got_m = math.exp(res.class_log_measure)
        if not math.isclose(orc.class_measure, got_m, rel_tol=1e-9, abs_tol=1e-15):
            report.exact_mismatches.append(
                f"measure: oracle {orc.class_measure!r} != dp {got_m!r} [{tag}]"
            )
        mc = tp.class_measure_mc(rule, m, x, p, n, mc_samples, rng)
        sigma = math.sqrt(orc.class_measure * (1 - orc.class_measure) / mc_samples)
        report.mc_cells += 1
        if abs(mc.value - orc.class_measure) <= 4 * sigma + 1e-12:
            report.mc_within += 1
        done += 1
    report.instances = done
    return report
