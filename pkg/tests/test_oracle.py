import math
from itertools import product

import numpy as np
import pytest

from caflow.measures import Bernoulli, Uniform, sample_window
from caflow.oracle import differential_suite, enumerate_class, lyapunov_brute
from caflow.partitions import dump_T_words
from caflow.rules import Window, elementary_rule, identity_rule, shift_rule, trace_of

U2 = Uniform(2)


def window(seed, reach=8, m=U2):
    return sample_window(m, -reach, 2 * reach + 1, np.random.default_rng(seed))


@pytest.mark.parametrize(
    "rule, p, n, G, count, measure",
    [
        (shift_rule(2, 1), 0, 2, (2, 2), 4, 1 / 8),
        (identity_rule(2), 0, 1, (1, 1), 4, 1 / 2),
        (elementary_rule(90), 1, 2, (2, 2), 1, 2.0**-7),
    ],
)
def test_examples(rule, p, n, G, count, measure):
    res = enumerate_class(rule, U2, window(3), p, n, G)
    assert res.count == count
    assert res.class_measure == pytest.approx(measure)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_shift_family_closed_form(n):
    x = window(n)
    res = enumerate_class(shift_rule(2, 1), U2, x, 0, n, (n, n))
    assert res.count == 2**n


@pytest.mark.parametrize("n", [1, 2])
def test_prod2_counts(prod2, uu, n):
    """Component one pins n+1 cells of 2n+1, component two pins n+1 of 4n+1 (the even ones)."""
    x = window(5, reach=4 * n + 2, m=uu)
    res = enumerate_class(prod2, uu, x, 0, n, (2 * n, 2 * n))
    assert res.count == 2 ** (3 * n) * 2 ** (3 * n)


def test_prod2_p0_integrand_matches_flow(prod2, uu):
    """Pins the p = 0 curve values 2/5 and 1/3 used elsewhere."""
    vals = []
    for n in (1, 2):
        x = window(2, reach=4 * n + 2, m=uu)
        res = enumerate_class(prod2, uu, x, 0, n, (2 * n, 2 * n))
        vals.append(res.integrand())
    assert vals == pytest.approx([2 / 5, 1 / 3])


def test_dump_matches_partitions():
    x = window(1)
    res = enumerate_class(elementary_rule(30), U2, x, 1, 2, (2, 3))
    assert res.dump() == dump_T_words(elementary_rule(30), U2, x, 1, 2, (2, 3))


@pytest.mark.parametrize("code", [30, 90, 110])
def test_class_measures_sum_to_one(code):
    rule, p, n = elementary_rule(code), 1, 2
    m = Bernoulli(("1/3", "2/3"))
    reach = p + n
    seen, total = set(), 0.0
    for word in product((0, 1), repeat=2 * reach + 1):
        x = Window(-reach, np.array(word, dtype=np.uint8))
        res = enumerate_class(rule, m, x, p, n, (0, 0))
        key = trace_of(rule, x, p, n).key
        if key not in seen:
            seen.add(key)
            total += res.class_measure
    assert total == pytest.approx(1.0, abs=1e-12)


def test_integrand_and_filter():
    m = Bernoulli(("1/3", "2/3"))
    x = window(4, m=m)
    res = enumerate_class(shift_rule(2, 1), m, x, 0, 2, (2, 2))
    assert res.count == 4
    assert 1 <= res.filtered_count(0.0, m.entropy()) <= 4
    assert res.filtered_count(10.0, m.entropy()) == 4
    raw = 1 - math.log(4) / -res.x_log_measure
    assert res.integrand() == pytest.approx(min(1.0, max(0.0, raw)))


def test_budget():
    with pytest.raises(RuntimeError):
        enumerate_class(elementary_rule(30), U2, window(0, reach=20), 3, 8, (8, 8), budget=1 << 10)


def test_lyapunov_brute_examples():
    assert lyapunov_brute(shift_rule(2, 1), window(0), 3) == (0, 3)
    assert lyapunov_brute(identity_rule(2), window(0), 3) == (0, 0)
    assert lyapunov_brute(elementary_rule(90), window(0), 3) == (3, 3)


def test_differential_suite():
    rep = differential_suite(60, np.random.default_rng(2024), mc_samples=2000)
    assert rep.instances == 60
    assert rep.exact_mismatches == []
    assert rep.exact_checks == 3 * 60
    assert rep.passed
    d = rep.to_dict()
    assert d["mc_cells"] == 60 and d["passed"]
