"""Trace classes, the word sets they leave on a window, and their measures.

For a base point ``x`` the trace class collects every configuration whose
central ``2p+1`` cells agree with those of ``x`` under ``F^0..F^n``. Three
numbers are computed for it: the class measure, the number of distinct
words its members show on a window ``[-g_minus - p, g_plus + p]``, and the
same number restricted to words that are typical for the shift (the
delta-filter).

Exact routes:

* column DP for Markov-type measures (uniform, Bernoulli, Markov);
* admissible-word enumeration for Sturmian measures;
* componentwise evaluation for product rules under product measures.

Monte Carlo gives flagged estimates when the state budget is exceeded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Any, Mapping, Optional, Union

import numpy as np

from .dp import DEFAULT_BUDGET, BudgetExceeded, columns_for, trace_program
from .measures import MeasureModel, Sturmian, Uniform, Bernoulli, shift_entropy
from .rules import (
    ConeNotCovered,
    LocalRule,
    Trace,
    Window,
    batch_traces,
    compact_trace,
    format_words,
)

__all__ = [
    "DeltaFilter",
    "Linear",
    "MCEstimate",
    "Pointwise",
    "Sublinear",
    "TraceClassResult",
    "build_delta_filter",
    "class_measure_exact",
    "class_measure_mc",
    "count_T_exact",
    "count_T_filtered",
    "count_T_mc",
    "delta_filter_sequence",
    "dump_T_words",
    "effective_cone",
    "enumerate_T_words",
    "g_window",
    "trace_class",
    "velocity_from_config",
]

FILTER_TOL = 1e-9
HIST_LIMIT = 1 << 20


# ------------------------------------------------------------------ velocity


def _rational(v) -> Fraction:
    if isinstance(v, str):
        return Fraction(v.strip())
    if isinstance(v, float):
        return Fraction(v).limit_denominator(10**9)
    return Fraction(v)


@dataclass(frozen=True)
class Linear:
    """``g_minus = ceil(v_minus * n)`` cells to the left, ``g_plus`` to the right."""

    v_minus: Fraction
    v_plus: Fraction

    def __post_init__(self):
        vm, vp = _rational(self.v_minus), _rational(self.v_plus)
        if vm < 0 or vp < 0:
            raise ValueError("velocities must be >= 0")
        object.__setattr__(self, "v_minus", vm)
        object.__setattr__(self, "v_plus", vp)

    def resolve(self, n: int) -> tuple[int, int]:
        return math.ceil(self.v_minus * n), math.ceil(self.v_plus * n)

    @property
    def total(self) -> float:
        return float(self.v_minus + self.v_plus)

    def describe(self) -> tuple[str, str]:
        return str(self.v_minus), str(self.v_plus)


@dataclass(frozen=True)
class Sublinear:
    """``ceil(c * n**gamma)`` (family ``power``) or ``ceil(c * log(n+1))`` (``log``)."""

    family: str = "power"
    c_minus: float = 1.0
    c_plus: float = 1.0
    gamma: float = 0.5

    def __post_init__(self):
        if self.family not in ("power", "log"):
            raise ValueError("sublinear family must be 'power' or 'log'")
        if self.family == "power" and not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.c_minus < 0 or self.c_plus < 0 or self.c_minus + self.c_plus <= 0:
            raise ValueError("coefficients must be >= 0 and not both zero")

    def _g(self, c: float, n: int) -> int:
        if self.family == "power":
            return math.ceil(c * n**self.gamma - 1e-12)
        return math.ceil(c * math.log(n + 1) - 1e-12)

    def resolve(self, n: int) -> tuple[int, int]:
        return self._g(self.c_minus, n), self._g(self.c_plus, n)

    @property
    def total(self) -> float:
        return 0.0

    def describe(self) -> tuple[str, str]:
        if self.family == "power":
            return f"{self.c_minus}*n^{self.gamma}", f"{self.c_plus}*n^{self.gamma}"
        return f"{self.c_minus}*log(n+1)", f"{self.c_plus}*log(n+1)"


@dataclass(frozen=True)
class Pointwise:
    """Window extents taken from the per-point starred exponents.

    The left extent is ``I+*_n(x)`` and the right extent ``I-*_n(x)``:
    ``I-`` measures how far to the right a perturbation can sit and still
    reach the origin, so it bounds the right side of the window.
    """

    def resolve(self, n: int):
        raise ValueError("pointwise windows depend on the base point")

    @property
    def total(self) -> float:
        return float("nan")

    def describe(self) -> tuple[str, str]:
        return "I+*", "I-*"


VelocitySpec = Union[Linear, Sublinear, Pointwise]


def velocity_from_config(cfg: Any) -> VelocitySpec:
    """``{type: linear, v_minus, v_plus}``, ``{type: sublinear, ...}`` or ``pointwise``."""
    if isinstance(cfg, str):
        if cfg.lower() == "pointwise":
            return Pointwise()
        raise ValueError(f"unknown velocity {cfg!r}")
    if isinstance(cfg, (list, tuple)) and len(cfg) == 2:
        return Linear(cfg[0], cfg[1])
    if not isinstance(cfg, Mapping):
        raise ValueError("velocity must be a mapping")
    kind = str(cfg.get("type", "linear")).lower()
    if kind == "linear":
        return Linear(cfg["v_minus"], cfg["v_plus"])
    if kind == "sublinear":
        return Sublinear(
            str(cfg.get("family", "power")),
            float(cfg.get("c_minus", cfg.get("c", 1.0))),
            float(cfg.get("c_plus", cfg.get("c", 1.0))),
            float(cfg.get("gamma", 0.5)),
        )
    if kind == "pointwise":
        return Pointwise()
    raise ValueError(f"unknown velocity type {kind!r}")


def g_window(p: int, G: tuple[int, int]) -> tuple[int, int]:
    """Coordinates of the window observed for extents ``G = (g_minus, g_plus)``."""
    g_minus, g_plus = G
    if g_minus < 0 or g_plus < 0:
        raise ValueError("window extents must be >= 0")
    return (-g_minus - p, g_plus + p)


def effective_cone(rule: LocalRule, p: int, n: int) -> tuple[int, int]:
    lo, hi = rule.cone_span
    return (-p + n * lo, p + n * hi)


# ------------------------------------------------------------ histograms

Hist = dict  # rounded log-measure -> number of words


def _key(v: float) -> float:
    return round(float(v), 9)


def _hist_from(values, mults=None) -> Hist:
    out: Hist = {}
    values = np.asarray(values, dtype=float)
    if mults is None:
        mults = [1] * values.size
    for v, c in zip(values.tolist(), mults):
        if v == float("-inf"):
            continue
        key = _key(v)
        out[key] = out.get(key, 0) + int(c)
    return out


def _hist_product(a: Hist, b: Hist) -> Hist:
    out: Hist = {}
    for va, ca in a.items():
        for vb, cb in b.items():
            key = _key(va + vb)
            out[key] = out.get(key, 0) + ca * cb
    return out


def _iid_hist(probs, cells: int) -> Hist:
    """Log-measure histogram of all ``cells``-long words under an iid law."""
    probs = [p for p in probs if p > 0]
    out: Hist = {0.0: 1}
    single = _hist_from(np.log(probs))
    for _ in range(cells):
        out = _hist_product(out, single)
    return out


# ------------------------------------------------------------ result types


@dataclass(frozen=True)
class TraceClassResult:
    """Counts and measures attached to the trace class of one base point.

    ``count_T`` is exact unless ``lower_bound`` is set (Monte Carlo).
    ``histogram`` maps a rounded log-measure to the number of window words
    of ``<T>`` carrying it, when available.
    """

    trace: Trace
    window: tuple[int, int]
    count_T: int
    class_log_measure: float
    x_log_measure: float
    method: str
    lower_bound: bool = False
    class_stderr: float = 0.0
    coverage: Optional[float] = None
    histogram: Optional[Hist] = field(default=None, repr=False)
    filtered: bool = False
    samples: int = 0

    @property
    def log_count(self) -> float:
        return math.log(self.count_T) if self.count_T > 0 else float("-inf")

    @property
    def window_length(self) -> int:
        return self.window[1] - self.window[0] + 1


@dataclass(frozen=True)
class MCEstimate:
    """Empirical probability of reproducing a trace."""

    value: float
    stderr: float
    hits: int
    samples: int

    @property
    def zero_hits(self) -> bool:
        return self.hits == 0

    @property
    def upper_bound(self) -> float:
        """Rule-of-three 95% bound when nothing was hit."""
        return 3.0 / self.samples if self.hits == 0 else self.value + 2 * self.stderr

    @property
    def log_value(self) -> float:
        return math.log(self.value) if self.value > 0 else float("-inf")


@dataclass(frozen=True)
class _ClassData:
    count: int
    class_log_measure: float
    hist: Optional[Hist]
    method: str


# ------------------------------------------------------------ exact routes


def _dp_class(rule, m, trace: Trace, window, budget, want_hist) -> _ClassData:
    chain = m.markov_form()
    if chain is None:
        raise BudgetExceeded(f"no exact route for measure {m.label}")
    p, n = trace.p, trace.n
    k = rule.k
    cone_lo, cone_hi = effective_cone(rule, p, n)
    w_lo, w_hi = window
    full = m.full_support()
    pad_left = 0 if full else max(0, cone_lo - w_lo)
    pad_right = 0 if full else max(0, w_hi - cone_hi)
    cols = columns_for(rule, n, budget)
    prog = trace_program(cols, k, trace.rows, chain, pad_left, pad_right)
    base = cone_lo - pad_left
    top = cone_hi + pad_right
    clm = prog.log_weight()
    va, vb = w_lo - base, w_hi - base
    count_vis = prog.projected_count(va, vb)
    ex_left = max(0, base - w_lo)
    ex_right = max(0, w_hi - top)
    count = count_vis * k ** (ex_left + ex_right)
    hist = None
    if want_hist and count > 0:
        hist = _dp_hist(m, prog, base, window, ex_left, ex_right, count)
    return _ClassData(count, clm, hist, "dp_exact")


def _uniform_like(m) -> bool:
    if isinstance(m, Uniform):
        return True
    if isinstance(m, Bernoulli):
        return len(set(m.probs)) == 1
    return False


def _dp_hist(m, prog, base, window, ex_left, ex_right, count) -> Optional[Hist]:
    w_lo, w_hi = window
    L = w_hi - w_lo + 1
    if _uniform_like(m):
        return {_key(-L * math.log(m.k)): count}
    if prog.count() > HIST_LIMIT:
        return None
    words = prog.enumerate(HIST_LIMIT)
    va = max(w_lo - base, 0)
    vb = min(w_hi - base, len(prog) - 1)
    vis = np.unique(words[:, va : vb + 1], axis=0)
    if ex_left + ex_right == 0:
        return _hist_from(m.log_measure_rows(vis))
    chain = m.markov_form()
    pi, P = chain
    if np.allclose(P, pi[None, :]):
        # independent cells: excess cells contribute an additive term
        hist = _hist_from(m.log_measure_rows(vis))
        return _hist_product(hist, _iid_hist(pi, ex_left + ex_right))
    if vis.shape[0] * m.k ** (ex_left + ex_right) > HIST_LIMIT:
        return None
    e = ex_left + ex_right
    pad = (np.arange(m.k**e)[:, None] // m.k ** np.arange(e - 1, -1, -1)[None, :]) % m.k
    full = np.hstack(
        [
            np.repeat(pad[:, :ex_left], vis.shape[0], axis=0),
            np.tile(vis, (pad.shape[0], 1)),
            np.repeat(pad[:, ex_left:], vis.shape[0], axis=0),
        ]
    ).astype(np.uint8)
    return _hist_from(m.log_measure_rows(full))


def _sturmian_class(rule, m: Sturmian, trace: Trace, window, budget, want_hist) -> _ClassData:
    if rule.k != 2:
        raise ValueError("Sturmian measures live on a binary alphabet")
    p, n = trace.p, trace.n
    cone_lo, cone_hi = effective_cone(rule, p, n)
    h_lo, h_hi = min(cone_lo, window[0]), max(cone_hi, window[1])
    L = h_hi - h_lo + 1
    if L + 1 > budget:
        raise BudgetExceeded("too many admissible words")
    words, counts = m.admissible_words(L)
    cone = words[:, cone_lo - h_lo : cone_hi - h_lo + 1]
    traces = batch_traces(rule, cone, p, n)
    match = np.all(traces == trace.rows[None, :, :], axis=(1, 2))
    total = int(counts[match].sum())
    clm = math.log(total / m.den) if total else float("-inf")
    proj = words[match][:, window[0] - h_lo : window[1] - h_lo + 1]
    uniq = np.unique(proj, axis=0) if proj.shape[0] else proj
    hist = _hist_from(m.log_measure_rows(uniq)) if want_hist else None
    return _ClassData(int(uniq.shape[0]), clm, hist, "enumeration")


def _factor_measures(rule: LocalRule, m: MeasureModel):
    if not rule.factors:
        return None
    return m.as_product(tuple(f.k for f in rule.factors))


@lru_cache(maxsize=4096)
def _exact_class(rule, m, trace: Trace, window, budget, want_hist) -> _ClassData:
    comps = _factor_measures(rule, m)
    if comps is not None:
        parts = trace.rows
        split = rule.alphabet.split(parts)
        datas = [
            _exact_class(f, cm, Trace(trace.p, s), window, budget, want_hist)
            for f, cm, s in zip(rule.factors, comps, split)
        ]
        count = math.prod(d.count for d in datas)
        clm = sum(d.class_log_measure for d in datas)
        hist = None
        if want_hist and all(d.hist is not None for d in datas):
            hist = datas[0].hist
            for d in datas[1:]:
                hist = _hist_product(hist, d.hist)
        method = "enumeration" if any(d.method == "enumeration" for d in datas) else "dp_exact"
        return _ClassData(count, clm, hist, method)
    if isinstance(m, Sturmian):
        return _sturmian_class(rule, m, trace, window, budget, want_hist)
    return _dp_class(rule, m, trace, window, budget, want_hist)


def _check_cover(rule, x: Window, p, n, window=None):
    lo, hi = effective_cone(rule, p, n)
    if window is not None:
        lo, hi = min(lo, window[0]), max(hi, window[1])
    if not x.covers(lo, hi):
        raise ConeNotCovered(f"base window [{x.lo}, {x.hi}] does not cover [{lo}, {hi}]")


def class_measure_exact(rule: LocalRule, m: MeasureModel, x: Window, p: int, n: int,
                        budget: int = DEFAULT_BUDGET) -> float:
    """Exact natural-log measure of the trace class of ``x``."""
    _check_cover(rule, x, p, n)
    trace = compact_trace(rule, x, p, n)
    window = effective_cone(rule, p, n)
    return _exact_class(rule, m, trace, window, budget, False).class_log_measure


def count_T_exact(rule: LocalRule, m: MeasureModel, x: Window, p: int, n: int,
                  G: tuple[int, int], budget: int = DEFAULT_BUDGET,
                  with_histogram: bool = False) -> TraceClassResult:
    """Exact number of window words shown by the trace class of ``x``."""
    window = g_window(p, G)
    _check_cover(rule, x, p, n, window)
    trace = compact_trace(rule, x, p, n)
    data = _exact_class(rule, m, trace, window, budget, with_histogram)
    x_lm = m.log_measure(x.segment(*window))
    return TraceClassResult(
        trace=trace,
        window=window,
        count_T=data.count,
        class_log_measure=data.class_log_measure,
        x_log_measure=x_lm,
        method=data.method,
        histogram=data.hist,
    )


def enumerate_T_words(rule: LocalRule, m: MeasureModel, x: Window, p: int, n: int,
                      G: tuple[int, int], limit: int = HIST_LIMIT,
                      budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """The words of ``<T>`` on the window, sorted, for dumps and diffs."""
    window = g_window(p, G)
    _check_cover(rule, x, p, n, window)
    trace = compact_trace(rule, x, p, n)
    cone_lo, cone_hi = effective_cone(rule, p, n)
    h_lo, h_hi = min(cone_lo, window[0]), max(cone_hi, window[1])
    if isinstance(m, Sturmian):
        words, _ = m.admissible_words(h_hi - h_lo + 1)
    else:
        if rule.k ** (h_hi - h_lo + 1 - (cone_hi - cone_lo + 1)) > limit:
            raise BudgetExceeded("too many words outside the cone")
        cols = columns_for(rule, trace.n, budget)
        prog = trace_program(
            cols, rule.k, trace.rows, m.markov_form(), cone_lo - h_lo, h_hi - cone_hi
        )
        return np.unique(prog.enumerate(limit)[:, window[0] - h_lo : window[1] - h_lo + 1], axis=0)
    cone = words[:, cone_lo - h_lo : cone_hi - h_lo + 1]
    match = np.all(batch_traces(rule, cone, p, trace.n) == trace.rows[None], axis=(1, 2))
    return np.unique(words[match][:, window[0] - h_lo : window[1] - h_lo + 1], axis=0)


def dump_T_words(*args, **kwargs) -> str:
    return format_words(enumerate_T_words(*args, **kwargs))


# ------------------------------------------------------------ Monte Carlo


def class_measure_mc(rule: LocalRule, m: MeasureModel, x: Window, p: int, n: int,
                     samples: int, rng: np.random.Generator) -> MCEstimate:
    """Fraction of freshly sampled cone words that reproduce the trace of ``x``."""
    _check_cover(rule, x, p, n)
    trace = compact_trace(rule, x, p, n)
    lo, hi = effective_cone(rule, p, n)
    words = m.sample_words(hi - lo + 1, rng, samples)
    hits = int(np.all(batch_traces(rule, words, p, n) == trace.rows[None], axis=(1, 2)).sum())
    est = hits / samples
    return MCEstimate(est, math.sqrt(est * (1 - est) / samples), hits, samples)


def count_T_mc(rule: LocalRule, m: MeasureModel, x: Window, p: int, n: int,
               G: tuple[int, int], samples: int, rng: np.random.Generator) -> TraceClassResult:
    """Distinct-word lower bound on ``#<T>`` with a Good-Turing coverage estimate."""
    window = g_window(p, G)
    _check_cover(rule, x, p, n, window)
    trace = compact_trace(rule, x, p, n)
    cone_lo, cone_hi = effective_cone(rule, p, n)
    h_lo, h_hi = min(cone_lo, window[0]), max(cone_hi, window[1])
    words = m.sample_words(h_hi - h_lo + 1, rng, samples)
    cone = words[:, cone_lo - h_lo : cone_hi - h_lo + 1]
    match = np.all(batch_traces(rule, cone, p, trace.n) == trace.rows[None], axis=(1, 2))
    hits = int(match.sum())
    x_word = x.segment(*window)
    proj = words[match][:, window[0] - h_lo : window[1] - h_lo + 1]
    proj = np.vstack([proj, x_word[None, :]])
    uniq, freq = np.unique(proj, axis=0, return_counts=True)
    singles = int(np.sum(freq == 1))
    coverage = 1.0 - singles / max(proj.shape[0], 1)
    est = hits / samples
    return TraceClassResult(
        trace=trace,
        window=window,
        count_T=int(uniq.shape[0]),
        class_log_measure=math.log(est) if hits else float("-inf"),
        x_log_measure=m.log_measure(x_word),
        method="monte_carlo",
        lower_bound=True,
        class_stderr=math.sqrt(est * (1 - est) / samples),
        coverage=coverage,
        histogram=_hist_from(m.log_measure_rows(uniq)),
        samples=samples,
    )


def trace_class(rule: LocalRule, m: MeasureModel, x: Window, p: int, n: int,
                G: tuple[int, int], *, mode: str = "exact-first",
                budget: int = DEFAULT_BUDGET, samples: int = 4096,
                rng: Optional[np.random.Generator] = None,
                with_histogram: bool = True) -> TraceClassResult:
    """Exact when the budget allows, Monte Carlo otherwise (per ``mode``).

    ``mode`` is ``exact-first`` (fall back), ``exact-only`` (raise
    :class:`BudgetExceeded`) or ``mc-only``.
    """
    if mode not in ("exact-first", "exact-only", "mc-only"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode != "mc-only":
        try:
            res = count_T_exact(rule, m, x, p, n, G, budget, with_histogram)
            if with_histogram and res.histogram is None:
                raise BudgetExceeded("word set too large to enumerate")
            return res
        except BudgetExceeded:
            if mode == "exact-only":
                raise
    if rng is None:
        raise ValueError("Monte Carlo needs a random generator")
    return count_T_mc(rule, m, x, p, n, G, samples, rng)


# ------------------------------------------------------------ delta filter


@dataclass(frozen=True)
class DeltaFilter:
    """Keeps window words whose per-cell log-measure is close to the entropy.

    A word ``w`` of length ``L`` passes when
    ``|-log mu(w)/L - h_ref| <= eta_n``.
    """

    delta: float
    p: int
    n: int
    G: tuple[int, int]
    length: int
    eta_n: float
    h_ref: float
    method: str
    retained_mass: float
    samples: int = 0
    burn_in: Optional[int] = None

    def deviation(self, log_measure: float) -> float:
        if log_measure == float("-inf"):
            return float("inf")
        return abs(-log_measure / self.length - self.h_ref)

    def accepts(self, log_measure: float) -> bool:
        return self.deviation(log_measure) <= self.eta_n + FILTER_TOL


def build_delta_filter(m: MeasureModel, p: int, n: int, G: tuple[int, int], delta: float,
                       samples: int = 4096, rng: Optional[np.random.Generator] = None,
                       budget: int = HIST_LIMIT) -> DeltaFilter:
    """Smallest ``eta`` whose acceptance region has mass at least ``1 - delta``.

    Uses the exact law of the window log-measure when it is enumerable,
    the empirical quantile of ``samples`` windows otherwise.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    lo, hi = g_window(p, G)
    L = hi - lo + 1
    h = shift_entropy(m)
    dist = m.log_measure_distribution(L, budget)
    if dist is not None:
        vals, probs = dist
        dev = np.abs(-vals / L - h)
        order = np.argsort(dev, kind="stable")
        cum = np.cumsum(probs[order]) / probs.sum()
        idx = int(np.searchsorted(cum, 1 - delta - 1e-12))
        eta = float(dev[order][min(idx, dev.size - 1)])
        method = "exact"
        retained = float(probs[dev <= eta + FILTER_TOL].sum() / probs.sum())
        used = 0
    else:
        if rng is None:
            raise ValueError("a sampled filter needs a random generator")
        words = m.sample_words(L, rng, samples)
        dev = np.abs(-m.log_measure_rows(words) / L - h)
        eta = float(np.quantile(dev, 1 - delta, method="inverted_cdf"))
        retained = float(np.mean(dev <= eta + FILTER_TOL))
        method = "sampled"
        used = samples
    if eta < 1e-12:
        eta = 0.0
    return DeltaFilter(delta, p, n, tuple(G), L, eta, h, method, retained, used)


def delta_filter_sequence(m: MeasureModel, p: int, n_list, velocity, delta: float,
                          samples: int = 4096, rng=None, budget: int = HIST_LIMIT):
    """Filters along ``n_list`` with the burn-in after which ``eta`` never rises."""
    filters = [build_delta_filter(m, p, n, velocity.resolve(n), delta, samples, rng, budget)
               for n in n_list]
    etas = [f.eta_n for f in filters]
    start = len(etas) - 1
    while start > 0 and etas[start - 1] >= etas[start] - FILTER_TOL:
        start -= 1
    burn = n_list[start]
    return [replace(f, burn_in=burn) for f in filters]


def count_T_filtered(result: TraceClassResult, filt: DeltaFilter,
                     m: Optional[MeasureModel] = None) -> TraceClassResult:
    """Restrict ``<T>`` to words passing the filter.

    The base point's own word is always kept, so the count is at least 1.
    """
    if result.window_length != filt.length:
        raise ValueError("filter was built for a different window length")
    if result.histogram is None:
        raise ValueError("the result carries no word histogram")
    kept = 0
    for value, mult in result.histogram.items():
        if filt.accepts(value):
            kept += mult
    if not filt.accepts(result.x_log_measure):
        kept += 1
    return replace(result, count_T=max(kept, 1), filtered=True)
