"""Built-in rules and measure presets."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

from .measures import Bernoulli, Markov, MeasureModel, Product, Sturmian, Uniform
from .rules import LocalRule, elementary_rule, identity_rule, product_rule, shift_rule

__all__ = [
    "CatalogEntry",
    "MEASURE_PRESETS",
    "catalog_entries",
    "get_measure",
    "get_rule",
    "lookup",
]

MAX_POWER = 4


def _markov2() -> Markov:
    return Markov(((0.9, 0.1), (0.3, 0.7)))


MEASURE_PRESETS: dict[str, Callable[[], MeasureModel]] = {
    "uniform": lambda: Uniform(2),
    "uniform3": lambda: Uniform(3),
    "uniform4": lambda: Uniform(4),
    "bernoulli_1_3": lambda: Bernoulli(("1/3", "2/3")),
    "markov2": _markov2,
    "sturmian": Sturmian,
    "uniform_x_uniform": lambda: Product((Uniform(2), Uniform(2))),
    "uniform_x_sturmian": lambda: Product((Uniform(2), Sturmian())),
}


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    build: Callable[[], LocalRule] = field(repr=False)
    k: int
    radius: int
    measures: tuple[str, ...]
    tags: tuple[str, ...] = ()
    note: str = ""

    @property
    def bipermutative(self) -> bool:
        return "bipermutative" in self.tags

    def rule(self) -> LocalRule:
        return self.build().with_label(self.name)


def _tags(rule: LocalRule) -> tuple[str, ...]:
    left, right = rule.permutive()
    tags = []
    if left and right:
        tags.append("bipermutative")
    elif left:
        tags.append("left-permutive")
    elif right:
        tags.append("right-permutive")
    return tuple(tags)


def _entry(name, build, measures, note="", extra=()) -> CatalogEntry:
    rule = build()
    return CatalogEntry(name, build, rule.k, rule.radius, tuple(measures),
                        _tags(rule) + tuple(extra), note)


def _build_entries() -> dict[str, CatalogEntry]:
    out: dict[str, CatalogEntry] = {}
    single = ("uniform", "bernoulli_1_3", "markov2", "sturmian")
    out["identity"] = _entry("identity", lambda: identity_rule(2), single, "x -> x")
    out["shift"] = _entry("shift", lambda: shift_rule(2, 1), single, "left shift, (Fx)_i = x_{i+1}")
    for d in range(2, MAX_POWER + 1):
        out[f"shift{d}"] = _entry(f"shift{d}", lambda d=d: shift_rule(2, d), single,
                                  f"shift power {d}")
    for code in range(256):
        out[f"rule{code}"] = _entry(f"rule{code}", lambda c=code: elementary_rule(c), single,
                                    "elementary rule")
    for r in range(1, MAX_POWER + 1):
        out[f"prod{r}"] = _entry(
            f"prod{r}", lambda r=r: product_rule(shift_rule(2, 1), shift_rule(2, r)),
            ("uniform_x_uniform",), f"shift x shift^{r}", ("product",))
        out[f"id_x_shift{r}"] = _entry(
            f"id_x_shift{r}", lambda r=r: product_rule(identity_rule(2), shift_rule(2, r)),
            ("uniform_x_sturmian", "uniform_x_uniform"), f"identity x shift^{r}", ("product",))
        out[f"shift{r}_x_id"] = _entry(
            f"shift{r}_x_id", lambda r=r: product_rule(shift_rule(2, r), identity_rule(2)),
            ("uniform_x_sturmian", "uniform_x_uniform"), f"shift^{r} x identity", ("product",))
    return out


_ENTRIES: dict[str, CatalogEntry] | None = None


def catalog_entries() -> dict[str, CatalogEntry]:
    global _ENTRIES
    if _ENTRIES is None:
        _ENTRIES = _build_entries()
    return _ENTRIES


_ALIASES = {"id": "identity", "sigma": "shift", "shift1": "shift"}


def lookup(name: str) -> CatalogEntry:
    key = name.strip().lower().replace("-", "_")
    key = _ALIASES.get(key, key)
    key = re.sub(r"^rule_?(\d+)$", r"rule\1", key)
    entries = catalog_entries()
    if key not in entries:
        raise KeyError(f"unknown catalog rule {name!r}")
    return entries[key]


def get_rule(name: str) -> LocalRule:
    return lookup(name).rule()


def get_measure(name: str) -> MeasureModel:
    key = name.strip().lower()
    if key not in MEASURE_PRESETS:
        raise KeyError(f"unknown measure preset {name!r}")
    return MEASURE_PRESETS[key]()
