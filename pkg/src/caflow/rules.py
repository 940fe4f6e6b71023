"""Local rules, finite windows and light-cone exact evolution.

Configurations are never stored whole. A :class:`Window` is a finite word
pinned at an offset, and every evolution step shrinks it by the radius on
each side, so nothing outside the dependency cone is ever invented.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Alphabet",
    "ConeNotCovered",
    "LocalRule",
    "RuleError",
    "Trace",
    "Window",
    "apply_table",
    "batch_traces",
    "compact_trace",
    "elementary_rule",
    "evolve",
    "format_rule",
    "format_window",
    "format_words",
    "identity_rule",
    "make_rule",
    "parse_rule",
    "parse_window",
    "product_rule",
    "read_rule",
    "shift_rule",
    "spacetime",
    "step",
    "trace_of",
    "write_rule",
]

_DIGITS = "0123456789abcdefghijklmnopqrstuvwxyz"


class RuleError(ValueError):
    """Malformed rule table or rule file."""


class ConeNotCovered(ValueError):
    """A window is too short for the requested evolution."""


@dataclass(frozen=True)
class Alphabet:
    """Symbols ``0..size-1``, optionally a mixed-radix product.

    For a product the first component is the most significant digit, so
    with components ``(ka, kb)`` the pair ``(a, b)`` is the symbol ``a*kb + b``.
    """

    size: int
    components: tuple[int, ...] = ()

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"alphabet size must be >= 2, got {self.size}")
        if self.components:
            if any(c < 2 for c in self.components):
                raise ValueError("component sizes must be >= 2")
            if math.prod(self.components) != self.size:
                raise ValueError(
                    f"component sizes {self.components} do not multiply to {self.size}"
                )
            if len(self.components) == 1:
                object.__setattr__(self, "components", ())

    @property
    def is_product(self) -> bool:
        return len(self.components) > 1

    @property
    def factors(self) -> tuple[int, ...]:
        return self.components if self.is_product else (self.size,)

    def split(self, symbols) -> list[np.ndarray]:
        """Component projections of an array of symbols."""
        s = np.asarray(symbols, dtype=np.int64)
        parts = []
        for c in reversed(self.factors):
            parts.append((s % c).astype(np.uint8))
            s = s // c
        return parts[::-1]

    def join(self, parts: Sequence) -> np.ndarray:
        """Inverse of :meth:`split`."""
        if len(parts) != len(self.factors):
            raise ValueError("wrong number of component arrays")
        out = np.zeros(np.shape(parts[0]), dtype=np.int64)
        for c, part in zip(self.factors, parts):
            out = out * c + np.asarray(part, dtype=np.int64)
        return out.astype(np.uint8)


def _frozen(arr, dtype=np.uint8) -> np.ndarray:
    a = np.array(arr, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LocalRule:
    """Block map of radius ``radius`` over ``alphabet``.

    ``table[i]`` is the image of the neighborhood whose base-k expansion
    (leftmost cell most significant) is ``i``. ``factors`` is non-empty for
    rules built by :func:`product_rule` and lists the component rules.
    """

    alphabet: Alphabet
    radius: int
    table: np.ndarray
    label: str = ""
    factors: tuple["LocalRule", ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.radius < 0:
            raise RuleError("radius must be >= 0")
        table = np.asarray(self.table)
        expected = self.alphabet.size ** (2 * self.radius + 1)
        if table.ndim != 1 or table.shape[0] != expected:
            raise RuleError(
                f"table has {table.size} entries, expected k^(2r+1) = {expected}"
            )
        if table.size and (table.min() < 0 or table.max() >= self.alphabet.size):
            raise RuleError("table output symbol out of range")
        object.__setattr__(self, "table", _frozen(table))

    # identity and hashing go through the table bytes
    def _key(self):
        return (self.alphabet, self.radius, self.table.tobytes())

    def __eq__(self, other):
        if not isinstance(other, LocalRule):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        name = self.label or "rule"
        return f"LocalRule({name!r}, k={self.k}, r={self.radius})"

    @property
    def k(self) -> int:
        return self.alphabet.size

    @property
    def width(self) -> int:
        return 2 * self.radius + 1

    def __call__(self, *neighborhood: int) -> int:
        if len(neighborhood) != self.width:
            raise ValueError(f"expected {self.width} cells")
        idx = 0
        for a in neighborhood:
            idx = idx * self.k + int(a)
        return int(self.table[idx])

    @cached_property
    def span(self) -> tuple[int, int]:
        """Smallest offset interval ``[lo, hi]`` the table depends on.

        A constant rule reads nothing and reports ``(0, 0)``.
        """
        k, w = self.k, self.width
        cube = self.table.reshape((k,) * w)
        used = []
        for axis in range(w):
            first = np.take(cube, [0], axis=axis)
            if np.any(cube != first):
                used.append(axis - self.radius)
        if not used:
            return (0, 0)
        return (min(used), max(used))

    @cached_property
    def cone_span(self) -> tuple[int, int]:
        """``span`` widened to contain offset 0.

        A column of the space-time diagram at ``j`` over ``n`` steps is a
        function of cells ``[j + n*lo, j + n*hi]`` for this ``(lo, hi)``.
        """
        lo, hi = self.span
        return (min(lo, 0), max(hi, 0))

    def compact_table(self) -> np.ndarray:
        """Table restricted to the offsets of :attr:`cone_span`."""
        return self._compact

    @cached_property
    def _compact(self) -> np.ndarray:
        lo, hi = self.cone_span
        k, r = self.k, self.radius
        nb = hi - lo + 1
        digits = _all_words(k, nb)
        full = np.zeros((digits.shape[0], self.width), dtype=np.int64)
        full[:, lo + r : hi + r + 1] = digits
        return _frozen(self.table[_word_index(full, k)])

    def mirror(self) -> "LocalRule":
        """Rule of the left-right reflected automaton."""
        k, w = self.k, self.width
        words = _all_words(k, w)
        table = self.table[_word_index(words[:, ::-1], k)]
        factors = tuple(f.mirror() for f in self.factors)
        label = f"mirror({self.label})" if self.label else ""
        return LocalRule(self.alphabet, self.radius, table, label, factors)

    def permutive(self) -> tuple[bool, bool]:
        """Whether the rule is permutive in its leftmost / rightmost cell."""
        k, w = self.k, self.width
        cube = self.table.reshape((k,) * w)
        out = []
        for axis in (0, w - 1):
            moved = np.moveaxis(cube, axis, -1).reshape(-1, k)
            ok = all(len(set(row.tolist())) == k for row in moved)
            out.append(bool(ok and self.radius > 0))
        return out[0], out[1]

    def with_label(self, label: str) -> "LocalRule":
        return LocalRule(self.alphabet, self.radius, self.table, label, self.factors)


def _all_words(k: int, length: int) -> np.ndarray:
    """Every word of the given length in lexicographic order."""
    if length == 0:
        return np.zeros((1, 0), dtype=np.int64)
    idx = np.arange(k**length, dtype=np.int64)
    powers = k ** np.arange(length - 1, -1, -1, dtype=np.int64)
    return (idx[:, None] // powers[None, :]) % k


def _word_index(words: np.ndarray, k: int) -> np.ndarray:
    words = np.asarray(words, dtype=np.int64)
    powers = k ** np.arange(words.shape[-1] - 1, -1, -1, dtype=np.int64)
    return words @ powers


TableSpec = Union[Mapping[tuple, int], Callable[..., int], Sequence[int], np.ndarray]


def make_rule(k: int, r: int, table: TableSpec, label: str = "") -> LocalRule:
    """Validated rule from a mapping, a callable or a flat sequence.

    A mapping must list every neighborhood tuple exactly once; a callable is
    called with the ``2r+1`` cells; a sequence is taken in lexicographic
    neighborhood order.
    """
    if k < 2:
        raise RuleError("k must be >= 2")
    if r < 0:
        raise RuleError("r must be >= 0")
    w = 2 * r + 1
    neighborhoods = list(itertools.product(range(k), repeat=w))
    if isinstance(table, Mapping):
        keys = {tuple(int(a) for a in key) for key in table}
        missing = [nb for nb in neighborhoods if nb not in keys]
        if missing:
            raise RuleError(f"table is missing neighborhood {missing[0]}")
        if len(table) != len(neighborhoods):
            raise RuleError("table has neighborhoods of the wrong shape")
        values = [table[nb] for nb in neighborhoods]
    elif callable(table):
        values = [table(*nb) for nb in neighborhoods]
    else:
        values = list(np.asarray(table).ravel())
    values = [int(v) for v in values]
    if len(values) != k**w:
        raise RuleError(f"table has {len(values)} entries, expected {k**w}")
    if any(v < 0 or v >= k for v in values):
        raise RuleError("table output symbol out of range")
    return LocalRule(Alphabet(k), r, np.array(values, dtype=np.uint8), label)


def elementary_rule(code: int) -> LocalRule:
    """Wolfram elementary rule: neighborhood (a,b,c) maps to bit 4a+2b+c of code."""
    if not 0 <= int(code) <= 255:
        raise RuleError(f"elementary rule code must be in [0, 256), got {code}")
    table = [(int(code) >> i) & 1 for i in range(8)]
    return LocalRule(Alphabet(2), 1, np.array(table, dtype=np.uint8), f"rule{int(code)}")


def shift_rule(k: int, d: int) -> LocalRule:
    """sigma^d: radius |d|, output is the cell at offset d."""
    r = abs(d)
    words = _all_words(k, 2 * r + 1)
    table = words[:, r + d]
    if d == 0:
        label = "identity"
    elif d == 1:
        label = "shift"
    else:
        label = f"shift{d}" if d > 0 else f"shift({d})"
    return LocalRule(Alphabet(k), r, table.astype(np.uint8), label)


def identity_rule(k: int = 2) -> LocalRule:
    return shift_rule(k, 0)


def _flat_factors(rule: LocalRule) -> tuple[LocalRule, ...]:
    return rule.factors if rule.factors else (rule,)


def product_rule(a: LocalRule, b: LocalRule, label: str = "") -> LocalRule:
    """Both components evolve independently on the mixed-radix product alphabet."""
    factors = _flat_factors(a) + _flat_factors(b)
    sizes = tuple(f.k for f in factors)
    alphabet = Alphabet(math.prod(sizes), sizes)
    r = max(f.radius for f in factors)
    w = 2 * r + 1
    words = _all_words(alphabet.size, w)
    parts = alphabet.split(words)
    outs = []
    for f, part in zip(factors, parts):
        crop = part[:, r - f.radius : r + f.radius + 1]
        outs.append(f.table[_word_index(crop, f.k)])
    table = alphabet.join(outs)
    if not label:
        label = "x".join(f.label or "rule" for f in factors)
    return LocalRule(alphabet, r, table, label, factors)


@dataclass(frozen=True, eq=False)
class Window:
    """Finite word ``symbols`` whose first cell sits at coordinate ``offset``."""

    offset: int
    symbols: np.ndarray

    def __post_init__(self):
        sym = np.asarray(self.symbols)
        if sym.ndim != 1 or sym.size == 0:
            raise ValueError("a window needs a non-empty 1-d word")
        if sym.min() < 0 or sym.max() > 255:
            raise ValueError("symbols must fit in [0, 256)")
        object.__setattr__(self, "symbols", _frozen(sym))
        object.__setattr__(self, "offset", int(self.offset))

    @classmethod
    def from_word(cls, offset: int, word: Union[str, Iterable[int]]) -> "Window":
        if isinstance(word, str):
            word = [_DIGITS.index(ch) for ch in word.lower()]
        return cls(offset, np.array(list(word), dtype=np.uint8))

    def __len__(self) -> int:
        return int(self.symbols.shape[0])

    def __eq__(self, other):
        if not isinstance(other, Window):
            return NotImplemented
        return self.offset == other.offset and np.array_equal(self.symbols, other.symbols)

    def __hash__(self):
        return hash((self.offset, self.symbols.tobytes()))

    def __repr__(self):
        return f"Window({self.offset}, {self.word()!r})"

    @property
    def lo(self) -> int:
        return self.offset

    @property
    def hi(self) -> int:
        return self.offset + len(self) - 1

    def word(self) -> str:
        return "".join(_DIGITS[int(s)] for s in self.symbols)

    def covers(self, lo: int, hi: int) -> bool:
        return self.lo <= lo and hi <= self.hi

    def at(self, coord: int) -> int:
        if not self.lo <= coord <= self.hi:
            raise IndexError(f"coordinate {coord} outside [{self.lo}, {self.hi}]")
        return int(self.symbols[coord - self.offset])

    def restrict(self, lo: int, hi: int) -> "Window":
        if not self.covers(lo, hi):
            raise ConeNotCovered(
                f"window [{self.lo}, {self.hi}] does not cover [{lo}, {hi}]"
            )
        return Window(lo, self.symbols[lo - self.offset : hi - self.offset + 1])

    def segment(self, lo: int, hi: int) -> np.ndarray:
        """Symbols on ``[lo, hi]`` as a plain array."""
        return self.restrict(lo, hi).symbols

    def mirror(self) -> "Window":
        """Reflection through coordinate 0."""
        return Window(-self.hi, self.symbols[::-1])

    def replace(self, coord: int, values) -> "Window":
        sym = self.symbols.copy()
        vals = np.atleast_1d(np.asarray(values, dtype=np.uint8))
        start = coord - self.offset
        if start < 0 or start + vals.size > sym.size:
            raise IndexError("replacement runs outside the window")
        sym[start : start + vals.size] = vals
        return Window(self.offset, sym)


@dataclass(frozen=True, eq=False)
class Trace:
    """Rows ``F^i(x)`` restricted to ``[-p, p]`` for ``i = 0..n``."""

    p: int
    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows)
        if rows.ndim != 2 or rows.shape[1] != 2 * self.p + 1:
            raise ValueError("trace rows must have shape (n+1, 2p+1)")
        object.__setattr__(self, "rows", _frozen(rows))

    @property
    def n(self) -> int:
        return self.rows.shape[0] - 1

    @property
    def key(self) -> bytes:
        return self.p.to_bytes(4, "little") + self.rows.tobytes()

    def column(self, j: int) -> np.ndarray:
        """Time series of cell ``j`` (``-p <= j <= p``)."""
        return self.rows[:, j + self.p]

    def component(self, alphabet: Alphabet, i: int) -> "Trace":
        return Trace(self.p, alphabet.split(self.rows)[i])

    def words(self) -> list[str]:
        return ["".join(_DIGITS[int(s)] for s in row) for row in self.rows]

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return self.p == other.p and np.array_equal(self.rows, other.rows)

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"Trace(p={self.p}, rows={self.words()})"


def apply_table(table: np.ndarray, k: int, width: int, words: np.ndarray) -> np.ndarray:
    """One synchronous step on every row of ``words`` (shape ``(m, L)``).

    Returns shape ``(m, L - width + 1)``; column ``q`` of the result is the
    image of input cells ``q .. q+width-1``.
    """
    words = np.asarray(words)
    m, L = words.shape
    out_len = L - width + 1
    if out_len <= 0:
        raise ConeNotCovered("window shorter than the neighborhood")
    idx = np.zeros((m, out_len), dtype=np.int64)
    for d in range(width):
        idx *= k
        idx += words[:, d : d + out_len]
    return np.asarray(table)[idx]


def step(rule: LocalRule, w: Window) -> Window:
    """Image of ``w`` under one step; the result is ``2r`` cells shorter."""
    if len(w) <= 2 * rule.radius:
        raise ConeNotCovered(
            f"window of length {len(w)} is too short for radius {rule.radius}"
        )
    out = apply_table(rule.table, rule.k, rule.width, w.symbols[None, :])[0]
    return Window(w.offset + rule.radius, out)


def evolve(rule: LocalRule, w: Window, steps: int) -> Window:
    for _ in range(steps):
        w = step(rule, w)
    return w


def spacetime(rule: LocalRule, w: Window, steps: int) -> list[Window]:
    """``[w, F(w), ..., F^steps(w)]``, each exact on its own shrinking range."""
    rows = [w]
    for _ in range(steps):
        rows.append(step(rule, rows[-1]))
    return rows


def compact_trace(rule: LocalRule, x: Window, p: int, n: int) -> Trace:
    """Trace computed through the effective neighborhood only.

    Needs ``x`` to cover ``[-p + n*lo, p + n*hi]`` for ``(lo, hi) = cone_span``,
    which is never wider than the symmetric cone.
    """
    lo, hi = rule.cone_span
    seg = x.segment(-p + n * lo, p + n * hi)[None, :]
    table = rule.compact_table()
    nb = hi - lo + 1
    rows = np.empty((n + 1, 2 * p + 1), dtype=np.uint8)
    for i in range(n + 1):
        # the segment currently spans [-p + (n-i)*lo, p + (n-i)*hi]
        start = -(n - i) * lo
        rows[i] = seg[0, start : start + 2 * p + 1]
        if i < n:
            seg = apply_table(table, rule.k, nb, seg)
    return Trace(p, rows)


def batch_traces(rule: LocalRule, words: np.ndarray, p: int, n: int) -> np.ndarray:
    """Traces of many cone words at once, shape ``(m, n+1, 2p+1)``.

    Each row of ``words`` holds the cells ``[-p + n*lo, p + n*hi]`` for
    ``(lo, hi) = rule.cone_span``.
    """
    lo, hi = rule.cone_span
    words = np.asarray(words, dtype=np.uint8)
    if words.shape[1] != 2 * p + 1 + n * (hi - lo):
        raise ConeNotCovered("rows do not match the effective cone")
    table = rule.compact_table()
    nb = hi - lo + 1
    out = np.empty((words.shape[0], n + 1, 2 * p + 1), dtype=np.uint8)
    seg = words
    for i in range(n + 1):
        start = -(n - i) * lo
        out[:, i, :] = seg[:, start : start + 2 * p + 1]
        if i < n:
            seg = apply_table(table, rule.k, nb, seg)
    return out


def trace_of(rule: LocalRule, w: Window, p: int, n: int) -> Trace:
    """Rows ``(F^i w)(-p..p)`` for ``i = 0..n``; ``w`` must cover ``[-p-rn, p+rn]``."""
    if p < 0 or n < 0:
        raise ValueError("p and n must be >= 0")
    reach = p + rule.radius * n
    if not w.covers(-reach, reach):
        raise ConeNotCovered(
            f"window [{w.lo}, {w.hi}] does not cover the cone [{-reach}, {reach}]"
        )
    return compact_trace(rule, w, p, n)


# ---------------------------------------------------------------- text formats


def _digit_word(symbols: Iterable[int]) -> str:
    return "".join(_DIGITS[int(s)] for s in symbols)


def format_words(words: np.ndarray) -> str:
    """One word per line as base-k digits; the dump format for word sets."""
    return "".join(_digit_word(row) + "\n" for row in np.asarray(words))


def format_window(w: Window, alphabet: Alphabet | None = None) -> str:
    """``<offset>:<digits>``; product symbols become comma-separated digit groups."""
    if alphabet is not None and alphabet.is_product:
        parts = alphabet.split(w.symbols)
        groups = [_digit_word(col) for col in zip(*parts)]
        return f"{w.offset}:{','.join(groups)}"
    return f"{w.offset}:{_digit_word(w.symbols)}"


def parse_window(text: str, alphabet: Alphabet | None = None) -> Window:
    try:
        off_text, body = text.strip().split(":", 1)
        offset = int(off_text)
    except ValueError as exc:
        raise ValueError(f"not a window: {text!r}") from exc
    if alphabet is not None and alphabet.is_product:
        groups = body.split(",")
        if any(len(g) != len(alphabet.factors) for g in groups):
            raise ValueError("digit group length does not match the alphabet")
        parts = [[_DIGITS.index(g[i]) for g in groups] for i in range(len(alphabet.factors))]
        for size, part in zip(alphabet.factors, parts):
            if max(part) >= size:
                raise ValueError("component symbol out of range")
        return Window(offset, alphabet.join(parts))
    sym = [_DIGITS.index(ch) for ch in body.lower()]
    if alphabet is not None and max(sym) >= alphabet.size:
        raise ValueError("symbol out of range")
    return Window(offset, np.array(sym, dtype=np.uint8))


def format_rule(rule: LocalRule) -> str:
    lines = [f"k={rule.k} r={rule.radius}", " ".join(str(int(v)) for v in rule.table)]
    if rule.label:
        lines.append(f"label={rule.label}")
    return "\n".join(lines) + "\n"


def parse_rule(text: str) -> LocalRule:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if len(lines) < 2:
        raise RuleError("rule file needs a header line and a table line")
    header = dict(tok.split("=", 1) for tok in lines[0].split() if "=" in tok)
    try:
        k, r = int(header["k"]), int(header["r"])
    except (KeyError, ValueError) as exc:
        raise RuleError("header must read 'k=<int> r=<int>'") from exc
    try:
        values = [int(tok) for tok in lines[1].split()]
    except ValueError as exc:
        raise RuleError("table line must hold integers") from exc
    label = ""
    for ln in lines[2:]:
        if ln.startswith("label="):
            label = ln[len("label="):]
    return make_rule(k, r, values, label)


def read_rule(path: Union[str, Path]) -> LocalRule:
    return parse_rule(Path(path).read_text())


def write_rule(rule: LocalRule, path: Union[str, Path]) -> None:
    Path(path).write_text(format_rule(rule))
