"""Shift-invariant measures with exact cylinder log-measures and samplers.

Every model answers three questions: the natural-log measure of a finite
word (``-inf`` for measure zero), how to draw words from its marginals, and
how to extend a fixed word with the conditional law. Sturmian measures use a
rational rotation ``num/den`` with a uniform phase on ``Z_den``, so their
cylinder measures are exact integer arc lengths divided by ``den``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import gammaln

from .rules import Alphabet, LocalRule, Window, apply_table

__all__ = [
    "Bernoulli",
    "InvarianceReport",
    "Markov",
    "MeasureModel",
    "Product",
    "Sturmian",
    "Uniform",
    "ZeroMeasureError",
    "conditional_extension",
    "cylinder_log_measure",
    "invariance_check",
    "measure_from_config",
    "parse_probability",
    "sample_window",
    "shift_entropy",
]

NEG_INF = float("-inf")


class ZeroMeasureError(ValueError):
    """The fixed word has measure zero, so it has no admissible extension."""


def parse_probability(value: Any) -> float:
    """Decimal or rational text (``"1/3"``) to float, parsed exactly first."""
    if isinstance(value, str):
        return float(Fraction(value.strip()))
    return float(value)


def _merge(values: np.ndarray, weights: np.ndarray, decimals: int = 9):
    """Combine equal log values (after rounding) by summing their weights."""
    if values.size == 0:
        return values, weights
    keys = np.round(values, decimals)
    finite = np.isfinite(keys)
    keys = np.where(finite, keys, -np.inf)
    uniq, inverse = np.unique(keys, return_inverse=True)
    summed = np.zeros(uniq.shape[0], dtype=float)
    np.add.at(summed, inverse, weights)
    first = np.zeros(uniq.shape[0], dtype=float)
    first[inverse] = values
    return first, summed


class MeasureModel:
    """Interface shared by all measure variants."""

    k: int

    @property
    def label(self) -> str:
        raise NotImplementedError

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(self.k)

    def entropy(self) -> float:
        raise NotImplementedError

    def markov_form(self):
        """``(pi, P)`` when the model is a finite Markov chain, else ``None``."""
        return None

    def log_measure_rows(self, words: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_words(self, length: int, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def extend(self, fixed: Window, lo: int, hi: int, rng: np.random.Generator) -> Window:
        raise NotImplementedError

    def log_measure_distribution(self, length: int, budget: int = 1 << 20):
        """Exact law of ``log mu([W])`` for a random word W of the given length.

        Returns ``(values, probabilities)`` or ``None`` when the support is
        larger than ``budget``.
        """
        return None

    def as_product(self, sizes: Sequence[int]):
        """Component models when the measure splits along ``sizes``."""
        return None

    def full_support(self) -> bool:
        return True

    # convenience wrappers
    def log_measure(self, word) -> float:
        arr = np.asarray(word, dtype=np.uint8)[None, :]
        return float(self.log_measure_rows(arr)[0])


@dataclass(frozen=True)
class Uniform(MeasureModel):
    k: int = 2

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("uniform measure needs k >= 2")

    @property
    def label(self) -> str:
        return f"uniform{self.k}"

    def entropy(self) -> float:
        return math.log(self.k)

    def markov_form(self):
        pi = np.full(self.k, 1.0 / self.k)
        return pi, np.tile(pi, (self.k, 1))

    def log_measure_rows(self, words):
        words = np.asarray(words)
        return np.full(words.shape[0], -words.shape[1] * math.log(self.k))

    def sample_words(self, length, rng, size):
        return rng.integers(0, self.k, size=(size, length), dtype=np.uint8)

    def extend(self, fixed, lo, hi, rng):
        return _iid_extend(self, fixed, lo, hi, rng)

    def log_measure_distribution(self, length, budget=1 << 20):
        return np.array([-length * math.log(self.k)]), np.array([1.0])

    def as_product(self, sizes):
        if math.prod(sizes) == self.k and len(sizes) > 1:
            return tuple(Uniform(s) for s in sizes)
        return None


@dataclass(frozen=True)
class Bernoulli(MeasureModel):
    probs: tuple[float, ...] = (0.5, 0.5)

    def __post_init__(self):
        probs = tuple(parse_probability(p) for p in self.probs)
        if len(probs) < 2:
            raise ValueError("Bernoulli measure needs at least two symbols")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"probabilities must be >= 0 and sum to 1, got {probs}")
        object.__setattr__(self, "probs", probs)

    @property
    def k(self) -> int:
        return len(self.probs)

    @property
    def label(self) -> str:
        return "bernoulli(" + ",".join(f"{p:.6g}" for p in self.probs) + ")"

    @property
    def _logp(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.array(self.probs))

    def entropy(self) -> float:
        return -sum(p * math.log(p) for p in self.probs if p > 0)

    def markov_form(self):
        pi = np.array(self.probs)
        return pi, np.tile(pi, (self.k, 1))

    def full_support(self):
        return all(p > 0 for p in self.probs)

    def log_measure_rows(self, words):
        return self._logp[np.asarray(words, dtype=np.int64)].sum(axis=1)

    def sample_words(self, length, rng, size):
        return rng.choice(self.k, size=(size, length), p=np.array(self.probs)).astype(np.uint8)

    def extend(self, fixed, lo, hi, rng):
        return _iid_extend(self, fixed, lo, hi, rng)

    def log_measure_distribution(self, length, budget=1 << 20):
        k = self.k
        if math.comb(length + k - 1, k - 1) > budget:
            return None
        comps = _compositions(length, k)
        logp = self._logp
        with np.errstate(invalid="ignore"):
            vals = np.where(comps > 0, comps * logp[None, :], 0.0).sum(axis=1)
        log_multi = gammaln(length + 1) - gammaln(comps + 1).sum(axis=1)
        weights = np.exp(log_multi + vals)
        keep = np.isfinite(vals) & (weights > 0)
        return _merge(vals[keep], weights[keep])


def _compositions(total: int, parts: int) -> np.ndarray:
    """All non-negative integer vectors of the given length summing to total."""
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    rows = []
    for first in range(total + 1):
        rest = _compositions(total - first, parts - 1)
        rows.append(np.hstack([np.full((rest.shape[0], 1), first), rest]))
    return np.vstack(rows)


def _iid_extend(m, fixed: Window, lo: int, hi: int, rng) -> Window:
    _check_extension(m, fixed, lo, hi)
    words = m.sample_words(hi - lo + 1, rng, 1)[0]
    start = fixed.offset - lo
    words[start : start + len(fixed)] = fixed.symbols
    return Window(lo, words)


def _check_extension(m, fixed: Window, lo: int, hi: int) -> None:
    if lo > fixed.lo or hi < fixed.hi:
        raise ValueError("target range must contain the fixed range")
    if m.log_measure(fixed.symbols) == NEG_INF:
        raise ZeroMeasureError(f"word {fixed.word()} has measure zero")


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Left Perron vector of a stochastic matrix."""
    k = P.shape[0]
    A = np.vstack([P.T - np.eye(k), np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass(frozen=True)
class Markov(MeasureModel):
    """Stationary Markov chain; ``P[a][b]`` is the probability of b after a."""

    P: tuple[tuple[float, ...], ...] = ((0.9, 0.1), (0.1, 0.9))
    pi: tuple[float, ...] = ()

    def __post_init__(self):
        P = np.array([[parse_probability(v) for v in row] for row in self.P], dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 2:
            raise ValueError("transition matrix must be square with k >= 2")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("transition rows must be probability vectors")
        if self.pi:
            pi = np.array([parse_probability(v) for v in self.pi], dtype=float)
        else:
            pi = stationary_distribution(P)
        if pi.shape != (P.shape[0],) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("stationary distribution must sum to 1")
        if np.max(np.abs(pi @ P - pi)) > 1e-10:
            raise ValueError("pi is not stationary for P")
        object.__setattr__(self, "P", tuple(tuple(float(v) for v in row) for row in P))
        object.__setattr__(self, "pi", tuple(float(v) for v in pi))

    @property
    def k(self) -> int:
        return len(self.pi)

    @property
    def label(self) -> str:
        rows = ";".join(",".join(f"{v:.6g}" for v in row) for row in self.P)
        return f"markov({rows})"

    def markov_form(self):
        return np.array(self.pi), np.array(self.P)

    def full_support(self):
        return all(v > 0 for v in self.pi) and all(v > 0 for row in self.P for v in row)

    def entropy(self) -> float:
        h = 0.0
        for a, row in enumerate(self.P):
            for v in row:
                if v > 0:
                    h -= self.pi[a] * v * math.log(v)
        return h

    def log_measure_rows(self, words):
        words = np.asarray(words, dtype=np.int64)
        pi, P = self.markov_form()
        with np.errstate(divide="ignore"):
            lpi, lP = np.log(pi), np.log(P)
        out = lpi[words[:, 0]]
        if words.shape[1] > 1:
            out = out + lP[words[:, :-1], words[:, 1:]].sum(axis=1)
        return out

    def sample_words(self, length, rng, size):
        pi, P = self.markov_form()
        cum = np.cumsum(P, axis=1)
        out = np.empty((size, length), dtype=np.uint8)
        out[:, 0] = rng.choice(self.k, size=size, p=pi)
        for i in range(1, length):
            u = rng.random(size)
            nxt = (u[:, None] > cum[out[:, i - 1]]).sum(axis=1)
            out[:, i] = np.minimum(nxt, self.k - 1)
        return out

    def _reverse(self) -> np.ndarray:
        pi, P = self.markov_form()
        with np.errstate(divide="ignore", invalid="ignore"):
            R = (P * pi[:, None]).T / pi[:, None]
        return np.nan_to_num(R)

    def extend(self, fixed, lo, hi, rng):
        _check_extension(self, fixed, lo, hi)
        _, P = self.markov_form()
        R = self._reverse()
        out = np.empty(hi - lo + 1, dtype=np.uint8)
        start = fixed.offset - lo
        out[start : start + len(fixed)] = fixed.symbols
        for i in range(start + len(fixed), out.size):
            out[i] = rng.choice(self.k, p=P[out[i - 1]])
        for i in range(start - 1, -1, -1):
            out[i] = rng.choice(self.k, p=R[out[i + 1]])
        return Window(lo, out)

    def log_measure_distribution(self, length, budget=1 << 20):
        if self.k**length > budget:
            return None
        idx = np.arange(self.k**length, dtype=np.int64)
        powers = self.k ** np.arange(length - 1, -1, -1, dtype=np.int64)
        words = (idx[:, None] // powers[None, :]) % self.k
        vals = self.log_measure_rows(words)
        keep = np.isfinite(vals)
        return _merge(vals[keep], np.exp(vals[keep]))


@dataclass(frozen=True)
class Product(MeasureModel):
    """Independent product; the first component is the most significant digit."""

    components: tuple[MeasureModel, ...] = ()

    def __post_init__(self):
        if len(self.components) < 2:
            raise ValueError("a product needs at least two components")
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def k(self) -> int:
        return math.prod(c.k for c in self.components)

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(self.k, tuple(c.k for c in self.components))

    @property
    def label(self) -> str:
        return "x".join(c.label for c in self.components)

    def entropy(self) -> float:
        return sum(c.entropy() for c in self.components)

    def full_support(self):
        return all(c.full_support() for c in self.components)

    def markov_form(self):
        forms = [c.markov_form() for c in self.components]
        if any(f is None for f in forms):
            return None
        pi, P = forms[0]
        for pi2, P2 in forms[1:]:
            pi, P = np.kron(pi, pi2), np.kron(P, P2)
        return pi, P

    def as_product(self, sizes):
        if tuple(sizes) == tuple(c.k for c in self.components):
            return self.components
        return None

    def log_measure_rows(self, words):
        parts = self.alphabet.split(words)
        return sum(c.log_measure_rows(part) for c, part in zip(self.components, parts))

    def sample_words(self, length, rng, size):
        parts = [c.sample_words(length, rng, size) for c in self.components]
        return self.alphabet.join(parts)

    def extend(self, fixed, lo, hi, rng):
        _check_extension(self, fixed, lo, hi)
        parts = self.alphabet.split(fixed.symbols)
        ext = [
            c.extend(Window(fixed.offset, part), lo, hi, rng).symbols
            for c, part in zip(self.components, parts)
        ]
        return Window(lo, self.alphabet.join(ext))

    def log_measure_distribution(self, length, budget=1 << 20):
        dists = [c.log_measure_distribution(length, budget) for c in self.components]
        if any(d is None for d in dists):
            return None
        vals, probs = dists[0]
        for v2, p2 in dists[1:]:
            if vals.size * v2.size > budget:
                return None
            vals = (vals[:, None] + v2[None, :]).ravel()
            probs = (probs[:, None] * p2[None, :]).ravel()
            vals, probs = _merge(vals, probs)
        return vals, probs


def _convergent_above(alpha: Fraction, min_den: int) -> Fraction:
    """First continued-fraction convergent of ``alpha`` with denominator > min_den."""
    h0, h1, k0, k1 = 0, 1, 1, 0
    x = alpha
    while True:
        a = math.floor(x)
        h0, h1 = h1, a * h1 + h0
        k0, k1 = k1, a * k1 + k0
        if k1 > min_den or x == a:
            return Fraction(h1, k1)
        x = 1 / (x - a)


GOLDEN_COMPLEMENT = 2 - (1 + math.sqrt(5)) / 2


@dataclass(frozen=True)
class Sturmian(MeasureModel):
    """Rotation coding ``x_i = 1`` iff ``(i*num + b) mod den >= den - num``.

    ``b`` is uniform on ``Z_den``. The coding threshold is ``1 - num/den``, so
    the arc coding symbol 1 has length ``num/den``.
    """

    num: int = 514229
    den: int = 1346269

    def __post_init__(self):
        if not 0 < self.num < self.den:
            raise ValueError("rotation number must lie in (0, 1)")
        if math.gcd(self.num, self.den) != 1:
            raise ValueError("rotation number must be in lowest terms")

    @classmethod
    def from_alpha(cls, alpha: float | str | Fraction = GOLDEN_COMPLEMENT, min_den: int = 10**6):
        conv = _convergent_above(Fraction(alpha), min_den)
        return cls(conv.numerator, conv.denominator)

    @property
    def k(self) -> int:
        return 2

    @property
    def alpha(self) -> float:
        return self.num / self.den

    @property
    def label(self) -> str:
        return f"sturmian({self.num}/{self.den})"

    def entropy(self) -> float:
        return 0.0

    def full_support(self):
        return False

    def code(self, phases: np.ndarray, offset: int, length: int) -> np.ndarray:
        i = np.arange(offset, offset + length, dtype=np.int64)
        pos = (np.asarray(phases, dtype=np.int64)[:, None] + (i * self.num)[None, :]) % self.den
        return (pos >= self.den - self.num).astype(np.uint8)

    def phase_set(self, word, offset: int = 0) -> list[tuple[int, int]]:
        """Disjoint half-open integer intervals of phases coding ``word`` at ``offset``."""
        Q, P = self.den, self.num
        cur = [(0, Q)]
        for i, s in enumerate(np.asarray(word).tolist()):
            start = (Q - P) if s == 1 else 0
            length = P if s == 1 else Q - P
            if s not in (0, 1):
                return []
            a = (start - (offset + i) * P) % Q
            arc = [(a, a + length)] if a + length <= Q else [(a, Q), (0, a + length - Q)]
            nxt = []
            for lo1, hi1 in cur:
                for lo2, hi2 in arc:
                    lo, hi = max(lo1, lo2), min(hi1, hi2)
                    if lo < hi:
                        nxt.append((lo, hi))
            cur = sorted(nxt)
            if not cur:
                break
        return cur

    def admissible_count(self, word) -> int:
        return sum(hi - lo for lo, hi in self.phase_set(word))

    def log_measure_rows(self, words):
        words = np.asarray(words)
        out = np.empty(words.shape[0])
        for r, row in enumerate(words):
            c = self.admissible_count(row)
            out[r] = math.log(c / self.den) if c else NEG_INF
        return out

    def admissible_words(self, length: int):
        """All words of positive measure with their phase counts.

        The ``length + 1`` cut points ``-i*num mod den`` split the circle into
        arcs; every phase in one arc codes the same word.
        """
        if length + 1 > self.den:
            raise ValueError("word length must stay below the rotation denominator")
        cuts = np.sort((-np.arange(length + 1, dtype=np.int64) * self.num) % self.den)
        lengths = np.diff(np.append(cuts, cuts[0] + self.den))
        words = self.code(cuts, 0, length)
        return words, lengths.astype(np.int64)

    def sample_words(self, length, rng, size):
        phases = rng.integers(0, self.den, size=size)
        return self.code(phases, 0, length)

    def extend(self, fixed, lo, hi, rng):
        if lo > fixed.lo or hi < fixed.hi:
            raise ValueError("target range must contain the fixed range")
        arcs = self.phase_set(fixed.symbols, fixed.offset)
        total = sum(b - a for a, b in arcs)
        if total == 0:
            raise ZeroMeasureError(f"word {fixed.word()} has measure zero")
        u = int(rng.integers(0, total))
        for a, b in arcs:
            if u < b - a:
                phase = a + u
                break
            u -= b - a
        return Window(lo, self.code(np.array([phase]), lo, hi - lo + 1)[0])

    def log_measure_distribution(self, length, budget=1 << 20):
        if length + 1 > budget:
            return None
        words, counts = self.admissible_words(length)
        vals = np.log(counts / self.den)
        return _merge(vals, counts / self.den)


# ------------------------------------------------------------ module functions


def cylinder_log_measure(m: MeasureModel, w: Window) -> float:
    """Natural log of ``m([w])``; ``-inf`` when the cylinder is null."""
    return m.log_measure(w.symbols)


def sample_window(m: MeasureModel, offset: int, length: int, rng: np.random.Generator) -> Window:
    if length < 1:
        raise ValueError("length must be >= 1")
    return Window(offset, m.sample_words(length, rng, 1)[0])


def conditional_extension(
    m: MeasureModel, fixed: Window, lo: int, hi: int, rng: np.random.Generator
) -> Window:
    """Extend ``fixed`` to ``[lo, hi]`` under the conditional law of ``m``."""
    return m.extend(fixed, lo, hi, rng)


def shift_entropy(m: MeasureModel) -> float:
    """Entropy of the shift in nats."""
    return m.entropy()


@dataclass(frozen=True)
class InvarianceReport:
    word_len: int
    samples: int
    max_deviation: float
    threshold: float
    passed: bool


def invariance_check(
    m: MeasureModel,
    rule: LocalRule,
    word_len: int,
    samples: int,
    tol: float,
    rng: np.random.Generator,
) -> InvarianceReport:
    """Compare one-step push-forward word frequencies with the model's measures.

    Passes when every word deviates by at most ``tol`` plus four standard
    errors of its empirical frequency.
    """
    if word_len < 1:
        raise ValueError("word_len must be >= 1")
    r = rule.radius
    words = m.sample_words(word_len + 2 * r, rng, samples)
    images = apply_table(rule.table, rule.k, rule.width, words)
    k = rule.k
    powers = k ** np.arange(word_len - 1, -1, -1, dtype=np.int64)
    codes = images.astype(np.int64) @ powers
    freq = np.bincount(codes, minlength=k**word_len) / samples
    all_words = (np.arange(k**word_len)[:, None] // powers[None, :]) % k
    expected = np.exp(m.log_measure_rows(all_words))
    se = np.sqrt(expected * (1 - expected) / samples)
    dev = np.abs(freq - expected)
    excess = dev - (tol + 4 * se)
    worst = int(np.argmax(excess))
    return InvarianceReport(
        word_len=word_len,
        samples=samples,
        max_deviation=float(dev.max()),
        threshold=float(tol + 4 * se[worst]),
        passed=bool(np.all(excess <= 0)),
    )


# -------------------------------------------------------------- configuration


def measure_from_config(cfg: Mapping[str, Any]) -> MeasureModel:
    """Build a model from ``{type: ..., params: {...}}``."""
    if not isinstance(cfg, Mapping) or "type" not in cfg:
        raise ValueError("measure config needs a 'type' field")
    kind = str(cfg["type"]).lower()
    params = dict(cfg.get("params") or {})
    if kind == "uniform":
        return Uniform(int(params.get("k", 2)))
    if kind == "bernoulli":
        return Bernoulli(tuple(params["probs"]))
    if kind == "markov":
        P = tuple(tuple(row) for row in params["P"])
        pi = tuple(params.get("pi", ()))
        return Markov(P, pi)
    if kind == "product":
        return Product(tuple(measure_from_config(c) for c in params["components"]))
    if kind == "sturmian":
        if "num" in params and "den" in params:
            return Sturmian(int(params["num"]), int(params["den"]))
        alpha = params.get("alpha", GOLDEN_COMPLEMENT)
        if isinstance(alpha, str):
            alpha = Fraction(alpha.strip())
        return Sturmian.from_alpha(alpha, int(params.get("min_den", 10**6)))
    raise ValueError(f"unknown measure type {kind!r}")
