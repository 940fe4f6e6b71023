import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caflow.catalog import get_measure, get_rule
from caflow.dp import BudgetExceeded
from caflow.measures import Uniform, sample_window
from caflow.oracle import lyapunov_brute
from caflow.partitions import effective_cone
from caflow.perturbation import (
    EQUI,
    EXPANSIVE,
    ClassifyParams,
    average_exponents,
    bn_measure_curve,
    bn_measure_estimate,
    classify,
    influence_region,
    lyapunov_exact,
    lyapunov_sampled,
    lyapunov_star,
)
from caflow.rules import (
    ConeNotCovered,
    Window,
    batch_traces,
    elementary_rule,
    identity_rule,
    shift_rule,
    trace_of,
)

U2 = Uniform(2)


def region_window(rule, n, seed, extra=0, m=U2):
    a, b = influence_region(rule, n)
    return sample_window(m, a - extra, b - a + 1 + 2 * extra, np.random.default_rng(seed))


@pytest.mark.parametrize(
    "rule, n, want",
    [(identity_rule(2), 5, (0, 0)), (shift_rule(2, 1), 4, (0, 4)), (shift_rule(2, 3), 2, (0, 6))],
)
def test_exact_examples(rule, n, want):
    for seed in range(5):
        rec = lyapunov_exact(rule, region_window(rule, n, seed), n)
        assert (rec.i_plus, rec.i_minus) == want


def test_rule90_generic_point():
    rule = elementary_rule(90)
    recs = [lyapunov_exact(rule, region_window(rule, 4, s), 4) for s in range(10)]
    assert all((r.i_plus, r.i_minus) == (4, 4) for r in recs)


@settings(max_examples=60, deadline=None)
@given(code=st.integers(0, 255), n=st.integers(1, 3), seed=st.integers(0, 2**32 - 1))
def test_exact_matches_brute_force(code, n, seed):
    rule = elementary_rule(code)
    x = sample_window(U2, -2 * n - 1, 4 * n + 3, np.random.default_rng(seed))
    rec = lyapunov_exact(rule, x, n)
    assert (rec.i_plus, rec.i_minus) == lyapunov_brute(rule, x, n)


@settings(max_examples=40, deadline=None)
@given(code=st.integers(0, 255), n=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_bounds_and_monotonicity(code, n, seed):
    rule = elementary_rule(code)
    x = region_window(rule, n + 1, seed)
    here = lyapunov_exact(rule, x, n)
    nxt = lyapunov_exact(rule, x, n + 1)
    assert 0 <= here.i_plus <= rule.radius * n and 0 <= here.i_minus <= rule.radius * n
    assert nxt.i_plus >= here.i_plus and nxt.i_minus >= here.i_minus


@settings(max_examples=40, deadline=None)
@given(code=st.integers(0, 255), n=st.integers(1, 4), seed=st.integers(0, 2**32 - 1),
       samples=st.integers(1, 40))
def test_sampled_never_exceeds_exact(code, n, seed, samples):
    rule = elementary_rule(code)
    x = region_window(rule, n, seed)
    exact = lyapunov_exact(rule, x, n)
    low = lyapunov_sampled(rule, x, n, samples, np.random.default_rng(seed))
    assert low.mode == "sampled_lower_bound"
    assert low.i_plus <= exact.i_plus and low.i_minus <= exact.i_minus


def test_sampled_examples():
    rng = np.random.default_rng(0)
    x = region_window(shift_rule(2, 1), 5, 1)
    rec = lyapunov_sampled(shift_rule(2, 1), x, 5, 1, rng)
    assert (rec.i_plus, rec.i_minus) == (0, 5)
    assert lyapunov_sampled(identity_rule(2), region_window(identity_rule(2), 3, 0), 3, 10, rng).i_minus == 0
    r90 = elementary_rule(90)
    rec = lyapunov_sampled(r90, region_window(r90, 6, 2), 6, 32, rng)
    assert (rec.i_plus, rec.i_minus) == (6, 6)


@settings(max_examples=25, deadline=None)
@given(code=st.integers(0, 255), p=st.integers(0, 1), n=st.integers(1, 2), seed=st.integers(0, 2**32 - 1))
def test_star_dominates_exact(code, p, n, seed):
    rule = elementary_rule(code)
    x = region_window(rule, n, seed, extra=p)
    star = lyapunov_star(rule, x, p, n, rng=np.random.default_rng(seed))
    exact = lyapunov_exact(rule, x, n)
    assert star.i_plus >= exact.i_plus and star.i_minus >= exact.i_minus
    assert star.i_plus <= n and star.i_minus <= n


def test_star_examples(prod2):
    rng = np.random.default_rng(0)
    x = region_window(shift_rule(2, 1), 3, 0)
    rec = lyapunov_star(shift_rule(2, 1), x, 0, 3, rng=rng)
    assert (rec.i_plus, rec.i_minus, rec.mode) == (0, 3, "exact")
    y = region_window(prod2, 2, 0, m=get_measure("uniform_x_uniform"))
    rec = lyapunov_star(prod2, y, 0, 2, rng=rng)
    assert (rec.i_plus, rec.i_minus) == (0, 4)
    assert lyapunov_star(identity_rule(2), region_window(identity_rule(2), 2, 0, extra=1), 1, 2).i_minus == 0


def test_star_samples_when_class_is_large():
    rule = elementary_rule(30)
    x = region_window(rule, 4, 3, extra=1)
    rec = lyapunov_star(rule, x, 1, 4, rng=np.random.default_rng(0), member_budget=4, samples=8)
    assert rec.mode == "sampled_lower_bound" and rec.samples == 8
    with pytest.raises(ValueError):
        lyapunov_star(rule, x, 1, 4, member_budget=4)


ADDITIVE = (15, 51, 60, 90, 102, 105, 150, 153, 165, 170, 195, 204, 240)


def _pinned(rule, x, p, n, lo, hi):
    """Does every cone word agreeing with x on [lo, hi] reproduce the trace of x?"""
    cl, ch = effective_cone(rule, p, n)
    lo, hi = max(lo, cl), min(hi, ch)
    words = np.array(list(product((0, 1), repeat=ch - cl + 1)), dtype=np.uint8)
    words[:, lo - cl : hi - cl + 1] = x.segment(lo, hi)
    return bool(np.all(batch_traces(rule, words, p, n) == trace_of(rule, x, p, n).rows[None]))


def _reach(rule, x, p, n):
    recs = {j: lyapunov_exact(rule, Window(x.offset - j, x.symbols), n) for j in range(-p, p + 1)}
    return min(j - r.i_plus for j, r in recs.items()), max(j + r.i_minus for j, r in recs.items())


@pytest.mark.parametrize("p", [0, 1])
@pytest.mark.parametrize("code", [4, 30, 54, 90, 110, 150, 184, 232])
def test_one_sided_containment(code, p):
    """Perturbing only one side of the exponent cut leaves the trace alone."""
    rule, n = elementary_rule(code), 3
    for seed in range(3):
        x = sample_window(U2, -12, 25, np.random.default_rng(seed))
        lo, hi = _reach(rule, x, p, n)
        cl, ch = effective_cone(rule, p, n)
        assert _pinned(rule, x, p, n, cl, hi)
        assert _pinned(rule, x, p, n, lo, ch)


@pytest.mark.parametrize("code", ADDITIVE)
def test_two_sided_containment_for_additive_rules(code):
    rule, p, n = elementary_rule(code), 1, 3
    for seed in range(3):
        x = sample_window(U2, -12, 25, np.random.default_rng(seed))
        assert _pinned(rule, x, p, n, *_reach(rule, x, p, n))


def test_two_sided_containment_can_fail():
    """Each flip alone is harmless, together they change the origin."""
    rule = elementary_rule(4)
    x = Window.from_word(-6, "1111111111111")
    rec = lyapunov_exact(rule, x, 1)
    assert (rec.i_plus, rec.i_minus) == (0, 0)
    assert not _pinned(rule, x, 0, 1, 0, 0)


def test_product_takes_componentwise_max(prod2):
    m = get_measure("uniform_x_uniform")
    x = region_window(prod2, 3, 5, m=m)
    rec = lyapunov_exact(prod2, x, 3)
    assert (rec.i_plus, rec.i_minus) == (0, 6)


def test_region_checked():
    with pytest.raises(ConeNotCovered):
        lyapunov_exact(elementary_rule(90), Window.from_word(-1, "010"), 3)


def test_exact_budget():
    rule = elementary_rule(30)
    with pytest.raises(BudgetExceeded):
        lyapunov_exact(rule, region_window(rule, 10, 0), 10, budget=1 << 8)


@pytest.mark.parametrize(
    "name, measure, want",
    [("prod2", "uniform_x_uniform", (0.0, 2.0)), ("identity", "uniform", (0.0, 0.0))],
)
def test_average_exponents_examples(name, measure, want):
    est = average_exponents(get_rule(name), get_measure(measure), 4, 20, np.random.default_rng(0))
    assert (est.plus, est.minus) == want and est.mode == "exact"


def test_average_exponents_rule90():
    plus, minus = average_exponents(elementary_rule(90), U2, 5, 20, np.random.default_rng(1))
    assert plus == minus == 1.0
    with pytest.raises(ValueError):
        average_exponents(elementary_rule(90), U2, 0, 5, np.random.default_rng(1))


# ------------------------------------------------------------ stability


def test_bn_identity_and_shift():
    rng = np.random.default_rng(2)
    x = sample_window(U2, -20, 41, rng)
    for est in bn_measure_curve(identity_rule(2), U2, x, 1, [1, 4, 9], 100, rng):
        assert est.estimate == pytest.approx(1 / 8) and est.mode == "exact"
    for T in (1, 3, 6):
        est = bn_measure_estimate(shift_rule(2, 1), U2, x, 1, T, 100, rng)
        assert est.estimate == pytest.approx(2.0 ** -(3 + T))


def test_bn_rule90_decays():
    rng = np.random.default_rng(4)
    x = sample_window(U2, -30, 61, rng)
    est = bn_measure_estimate(elementary_rule(90), U2, x, 2, 12, 2000, rng)
    assert est.upper < 1e-3


@settings(max_examples=15, deadline=None)
@given(code=st.integers(0, 255), seed=st.integers(0, 2**32 - 1))
def test_bn_curve_is_monotone(code, seed):
    rng = np.random.default_rng(seed)
    rule = elementary_rule(code)
    x = sample_window(U2, -40, 81, rng)
    for budget in (1 << 24, 1 << 6):
        curve = bn_measure_curve(rule, U2, x, 2, [1, 2, 4, 8, 16], 500, rng, budget)
        vals = [c.estimate for c in curve]
        assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))
        assert vals[0] <= curve[0].cylinder + 1e-15


def test_stability_upper_rule_of_three():
    rng = np.random.default_rng(0)
    x = sample_window(U2, -60, 121, rng)
    est = bn_measure_estimate(elementary_rule(90), U2, x, 2, 24, 100, rng, budget=1 << 6)
    assert est.mode == "monte_carlo" and est.hits == 0
    assert est.upper == pytest.approx(3 / 100 * est.cylinder)


@pytest.mark.parametrize(
    "name, label",
    [("identity", EQUI), ("rule204", EQUI), ("shift", EXPANSIVE), ("rule90", EXPANSIVE)],
)
def test_classify_labels(name, label):
    params = ClassifyParams(points=4, samples=500)
    rep = classify(get_rule(name), U2, params, np.random.default_rng(7), seed=7)
    assert rep.label == label
    d = rep.to_dict()
    assert set(d) >= {"rule", "measure", "label", "per_x", "horizons", "seeds"}
    assert len(d["per_x"]) == 4 and d["seeds"] == {"seed": 7}
    assert math.isfinite(d["per_x"][0]["estimates"][-1])
