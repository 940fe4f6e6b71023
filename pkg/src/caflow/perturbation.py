"""Perturbation exponents, stability estimates and classification evidence.

``I-_n(x)`` is the least ``s`` such that no change of ``x`` on cells ``> s``
alters ``F^i(x)`` on cells ``<= 0`` for ``i <= n``; ``I+_n`` is its mirror
image. A change at cell ``q`` reaches the left half-line only if
``q <= n*hi``, so the check is finite: count, with the column DP, the
assignments of cells ``s+1 .. n*hi`` that keep every affected column of
``x`` intact, and compare with the number of all assignments.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .dp import DEFAULT_BUDGET, BudgetExceeded, Program, columns_for, trace_program
from .measures import MeasureModel
from .partitions import class_measure_exact, effective_cone
from .rules import ConeNotCovered, LocalRule, Window, apply_table, batch_traces, compact_trace

__all__ = [
    "ClassificationReport",
    "ClassifyParams",
    "ExponentEstimate",
    "LyapunovRecord",
    "StabilityEstimate",
    "average_exponents",
    "bn_measure_curve",
    "bn_measure_estimate",
    "classify",
    "influence_region",
    "lyapunov_exact",
    "lyapunov_sampled",
    "lyapunov_star",
]


@dataclass(frozen=True)
class LyapunovRecord:
    n: int
    i_plus: int
    i_minus: int
    mode: str = "exact"
    samples: int = 0


@dataclass(frozen=True)
class StabilityEstimate:
    n: int
    horizon: int
    estimate: float
    stderr: float
    mode: str = "exact"
    hits: int = 0
    samples: int = 0
    cylinder: float = 1.0

    @property
    def upper(self) -> float:
        """Conservative upper value (rule of three when nothing was hit)."""
        if self.mode == "exact":
            return self.estimate
        if self.hits == 0:
            return 3.0 / self.samples * self.cylinder
        return self.estimate + 2 * self.stderr


@dataclass(frozen=True)
class ExponentEstimate:
    n: int
    plus: float
    minus: float
    plus_stderr: float
    minus_stderr: float
    mode: str
    samples: int

    def __iter__(self):
        yield self.plus
        yield self.minus


def influence_region(rule: LocalRule, n: int) -> tuple[int, int]:
    """Cells that can matter for either exponent at time ``n``."""
    lo, hi = rule.cone_span
    return (min(1 - n * hi + n * lo, n * lo), max(n * hi, n * hi - n * lo - 1))


# ------------------------------------------------------------ exact exponents


class _MinusSolver:
    """``I-_n`` of windows under one rule, sharing the column table."""

    def __init__(self, rule: LocalRule, n: int, budget: int):
        self.rule = rule
        self.n = n
        self.k = rule.k
        self.lo, self.hi = rule.cone_span
        self.cols = columns_for(rule, n, budget) if n > 0 and self.hi > 0 else None

    def insulated(self, x: Window, s: int, masks: dict) -> bool:
        n, lo, hi, k = self.n, self.lo, self.hi, self.k
        cols = self.cols
        J0 = min(0, s + 1 - n * hi)
        first = J0 + n * lo
        checks = [None] * cols.S
        for j in range(J0, 1):
            if j not in masks:
                masks[j] = cols.mask(cols.column_of(x.segment(j + n * lo, j + n * hi)))
            checks.append(masks[j])
        allowed = []
        for c in range(first, n * hi + 1):
            if c <= s:
                a = np.zeros(k, dtype=bool)
                a[x.at(c)] = True
                allowed.append(a)
            else:
                allowed.append(None)
        prog = Program(k, cols.S, checks, allowed)
        return prog.count() == k ** (n * hi - s)

    def __call__(self, x: Window) -> int:
        if self.cols is None:
            return 0
        masks: dict = {}
        lo_s, hi_s = 0, self.n * self.hi  # hi_s always insulates
        while lo_s < hi_s:
            mid = (lo_s + hi_s) // 2
            if self.insulated(x, mid, masks):
                hi_s = mid
            else:
                lo_s = mid + 1
        return lo_s


def _check_region(rule: LocalRule, x: Window, n: int) -> None:
    a, b = influence_region(rule, n)
    if not x.covers(a, b):
        raise ConeNotCovered(f"window [{x.lo}, {x.hi}] does not cover [{a}, {b}]")


def _split(rule: LocalRule, x: Window):
    parts = rule.alphabet.split(x.symbols)
    return [(f, Window(x.offset, part)) for f, part in zip(rule.factors, parts)]


def lyapunov_exact(rule: LocalRule, x: Window, n: int, budget: int = DEFAULT_BUDGET) -> LyapunovRecord:
    """Exact ``(I+_n(x), I-_n(x))``."""
    if rule.factors:
        recs = [lyapunov_exact(f, xc, n, budget) for f, xc in _split(rule, x)]
        return LyapunovRecord(n, max(r.i_plus for r in recs), max(r.i_minus for r in recs))
    _check_region(rule, x, n)
    i_minus = _MinusSolver(rule, n, budget)(x)
    i_plus = _MinusSolver(rule.mirror(), n, budget)(x.mirror())
    return LyapunovRecord(n, i_plus, i_minus, "exact", 0)


def _sampled_minus(rule: LocalRule, x: Window, n: int, samples: int, rng) -> int:
    lo, hi = rule.cone_span
    R = n * hi
    if R == 0 or samples <= 0:
        return 0
    A, B = 1 - n * hi + n * lo, n * hi
    seg = x.segment(A, B)
    k = rule.k
    coords = np.arange(A, B + 1)
    cuts = R - (np.arange(samples) % R)
    Y = np.tile(seg, (samples, 1))
    noise = rng.integers(0, k, size=Y.shape, dtype=np.uint8)
    region = coords[None, :] > cuts[:, None]
    Y = np.where(region, noise, Y).astype(np.uint8)
    bump = rng.integers(1, k, size=samples)
    Y[np.arange(samples), cuts - A] = (seg[cuts - A] + bump) % k
    X = seg[None, :]
    table = rule.compact_table()
    nb = hi - lo + 1
    reached = np.zeros(samples, dtype=bool)
    start = A
    for i in range(1, n + 1):
        X = apply_table(table, k, nb, X)
        Y = apply_table(table, k, nb, Y)
        start -= lo
        upto = 0 - start + 1
        if upto > 0:
            reached |= np.any(Y[:, :upto] != X[:, :upto], axis=1)
    return int(cuts[reached].max()) if reached.any() else 0


def lyapunov_sampled(rule: LocalRule, x: Window, n: int, samples: int,
                     rng: np.random.Generator) -> LyapunovRecord:
    """Lower bounds from random perturbations beyond a sweep of cut points.

    Sample ``i`` changes the cell at ``q = n*hi - (i mod n*hi)`` and
    randomizes everything to its right; if the change reaches the origin,
    ``q - 1`` is not an insulating cut and ``I- >= q``.
    """
    if rule.factors:
        recs = [lyapunov_sampled(f, xc, n, samples, rng) for f, xc in _split(rule, x)]
        return LyapunovRecord(n, max(r.i_plus for r in recs), max(r.i_minus for r in recs),
                              "sampled_lower_bound", samples)
    _check_region(rule, x, n)
    i_minus = _sampled_minus(rule, x, n, samples, rng)
    i_plus = _sampled_minus(rule.mirror(), x.mirror(), n, samples, rng)
    return LyapunovRecord(n, i_plus, i_minus, "sampled_lower_bound", samples)


def _exponents(rule, x, n, budget, rng, samples):
    try:
        return lyapunov_exact(rule, x, n, budget)
    except BudgetExceeded:
        return lyapunov_sampled(rule, x, n, samples, rng)


def lyapunov_star(rule: LocalRule, x: Window, p: int, n: int, budget: int = DEFAULT_BUDGET,
                  rng: Optional[np.random.Generator] = None, member_budget: int = 4096,
                  samples: int = 64) -> LyapunovRecord:
    """Largest exponents over the members of the trace class of ``x``.

    Members differ from ``x`` only on the influence region; their cone part
    must reproduce the trace. Enumerated when there are at most
    ``member_budget`` of them, else sampled (a lower bound).
    """
    if rule.factors:
        recs = [lyapunov_star(f, xc, p, n, budget, rng, member_budget, samples)
                for f, xc in _split(rule, x)]
        mode = "exact" if all(r.mode == "exact" for r in recs) else "sampled_lower_bound"
        return LyapunovRecord(n, max(r.i_plus for r in recs), max(r.i_minus for r in recs),
                              mode, max(r.samples for r in recs))
    k = rule.k
    a, b = influence_region(rule, n)
    c_lo, c_hi = effective_cone(rule, p, n)
    h_lo, h_hi = min(a, c_lo), max(b, c_hi)
    if not x.covers(h_lo, h_hi):
        raise ConeNotCovered(f"window [{x.lo}, {x.hi}] does not cover [{h_lo}, {h_hi}]")
    trace = compact_trace(rule, x, p, n)
    cols = columns_for(rule, n, budget)
    prog = trace_program(cols, k, trace.rows)
    free = (c_lo - h_lo) + (h_hi - c_hi)
    total = prog.count() * k**free
    base = x.restrict(h_lo, h_hi).symbols
    seen: dict = {}

    def member(cone_word, free_word):
        sym = base.copy()
        sym[c_lo - h_lo : c_hi - h_lo + 1] = cone_word
        left = c_lo - h_lo
        sym[:left] = free_word[:left]
        sym[c_hi - h_lo + 1 :] = free_word[left:]
        return Window(h_lo, sym)

    def evaluate(y: Window):
        key = y.symbols.tobytes()
        if key not in seen:
            seen[key] = _exponents(rule, y, n, budget, rng, samples)
        return seen[key]

    records = [evaluate(x.restrict(h_lo, h_hi))]
    if total <= member_budget:
        mode = "exact"
        cone_words = prog.enumerate(member_budget)
        idx = np.arange(k**free, dtype=np.int64)
        powers = k ** np.arange(free - 1, -1, -1, dtype=np.int64)
        frees = ((idx[:, None] // powers[None, :]) % k).astype(np.uint8)
        for cw in cone_words:
            for fw in frees:
                records.append(evaluate(member(cw, fw)))
        used = 0
    else:
        if rng is None:
            raise ValueError("sampling class members needs a random generator")
        mode = "sampled_lower_bound"
        cone_words = prog.sample(samples, rng)
        frees = rng.integers(0, k, size=(samples, free), dtype=np.uint8)
        for cw, fw in zip(cone_words, frees):
            records.append(evaluate(member(cw, fw)))
        used = samples
    if any(r.mode != "exact" for r in records):
        mode = "sampled_lower_bound"
    return LyapunovRecord(n, max(r.i_plus for r in records), max(r.i_minus for r in records),
                          mode, used)


def average_exponents(rule: LocalRule, m: MeasureModel, n: int, samples: int,
                      rng: np.random.Generator, budget: int = DEFAULT_BUDGET,
                      perturbations: int = 64) -> ExponentEstimate:
    """Monte Carlo means of ``I+_n/n`` and ``I-_n/n`` over points drawn from ``m``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    a, b = influence_region(rule, n)
    plus, minus, modes = [], [], set()
    for _ in range(samples):
        x = Window(a, m.sample_words(b - a + 1, rng, 1)[0])
        rec = _exponents(rule, x, n, budget, rng, perturbations)
        plus.append(rec.i_plus / n)
        minus.append(rec.i_minus / n)
        modes.add(rec.mode)
    plus_a, minus_a = np.array(plus), np.array(minus)
    se = lambda v: float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    mode = "exact" if modes == {"exact"} else "sampled_lower_bound"
    return ExponentEstimate(n, float(plus_a.mean()), float(minus_a.mean()),
                            se(plus_a), se(minus_a), mode, samples)


# ------------------------------------------------------------ stability


def _extend_many(m: MeasureModel, fixed: Window, lo: int, hi: int, size: int, rng) -> np.ndarray:
    from .measures import Bernoulli, Uniform

    if isinstance(m, (Uniform, Bernoulli)):
        words = m.sample_words(hi - lo + 1, rng, size)
        words[:, fixed.offset - lo : fixed.offset - lo + len(fixed)] = fixed.symbols
        return words
    return np.vstack([m.extend(fixed, lo, hi, rng).symbols for _ in range(size)])


def bn_measure_curve(rule: LocalRule, m: MeasureModel, x: Window, n: int, horizons,
                     samples: int, rng: np.random.Generator,
                     budget: int = DEFAULT_BUDGET) -> list[StabilityEstimate]:
    """Estimates of the measure of points shadowing ``x`` on ``[-n, n]`` up to each horizon.

    Exact for every horizon when the largest one fits the budget; otherwise
    one common set of conditional samples serves all horizons, so the
    estimates never increase with the horizon.
    """
    horizons = sorted(int(h) for h in horizons)
    block = x.restrict(-n, n)
    cyl = math.exp(m.log_measure(block.symbols))
    try:
        vals = [class_measure_exact(rule, m, x, n, T, budget) for T in horizons]
        return [StabilityEstimate(n, T, math.exp(v), 0.0, "exact", 0, 0, cyl)
                for T, v in zip(horizons, vals)]
    except BudgetExceeded:
        pass
    T_max = horizons[-1]
    lo, hi = effective_cone(rule, n, T_max)
    if not x.covers(lo, hi):
        raise ConeNotCovered("base window too short for the largest horizon")
    words = _extend_many(m, block, lo, hi, samples, rng)
    traces = batch_traces(rule, words, n, T_max)
    target = compact_trace(rule, x, n, T_max).rows
    agree = np.all(traces == target[None], axis=2)  # (samples, T_max+1)
    alive = np.logical_and.accumulate(agree, axis=1)
    out = []
    for T in horizons:
        hits = int(alive[:, T].sum())
        q = hits / samples
        out.append(StabilityEstimate(n, T, cyl * q, cyl * math.sqrt(q * (1 - q) / samples),
                                     "monte_carlo", hits, samples, cyl))
    return out


def bn_measure_estimate(rule: LocalRule, m: MeasureModel, x: Window, n: int, horizon: int,
                        samples: int, rng: np.random.Generator,
                        budget: int = DEFAULT_BUDGET) -> StabilityEstimate:
    return bn_measure_curve(rule, m, x, n, [horizon], samples, rng, budget)[0]


@dataclass(frozen=True)
class ClassifyParams:
    n: Optional[int] = None
    horizons: tuple[int, ...] = (2, 4, 8, 16)
    points: int = 8
    samples: int = 2000
    stability_ratio: float = 0.5
    decay: float = 0.01
    budget: int = DEFAULT_BUDGET


@dataclass
class ClassificationReport:
    rule: str
    measure: str
    label: str
    n: int
    horizons: list
    per_x: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


EQUI = "mu-equicontinuous-evidence"
EXPANSIVE = "mu-expansive-evidence"
INCONCLUSIVE = "inconclusive"


def classify(rule: LocalRule, m: MeasureModel, params: ClassifyParams,
             rng: np.random.Generator, seed: Optional[int] = None) -> ClassificationReport:
    """Evidence labels from shadowing-measure curves of sampled points.

    A point supports equicontinuity when its last three estimates are
    positive, at least ten standard errors, and within ``stability_ratio``
    of each other. Expansiveness needs every point's final upper value to
    be below ``decay`` times the measure of its central block.
    """
    n = params.n if params.n is not None else max(rule.radius, 1)
    horizons = sorted(params.horizons)
    T_max = horizons[-1]
    lo, hi = effective_cone(rule, n, T_max)
    per_x, equi, decays = [], False, []
    for _ in range(params.points):
        x = Window(lo, m.sample_words(hi - lo + 1, rng, 1)[0])
        curve = bn_measure_curve(rule, m, x, n, horizons, params.samples, rng, params.budget)
        tail = curve[-3:]
        stable = all(c.estimate > 0 and c.estimate >= 10 * c.stderr for c in tail)
        if stable:
            stable = min(c.estimate for c in tail) >= params.stability_ratio * max(
                c.estimate for c in tail
            )
        equi = equi or stable
        decays.append(curve[-1].upper <= params.decay * curve[-1].cylinder)
        per_x.append({
            "x": f"{x.offset}:{x.word()}",
            "estimates": [c.estimate for c in curve],
            "stderrs": [c.stderr for c in curve],
            "modes": [c.mode for c in curve],
            "stable": bool(stable),
        })
    if equi:
        label = EQUI
    elif all(decays):
        label = EXPANSIVE
    else:
        label = INCONCLUSIVE
    return ClassificationReport(rule.label, m.label, label, n, horizons, per_x,
                                {"seed": seed})
