import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caflow.dp import BudgetExceeded
from caflow.measures import Bernoulli, Sturmian, Uniform, sample_window
from caflow.oracle import enumerate_class
from caflow.partitions import (
    Linear,
    Pointwise,
    Sublinear,
    build_delta_filter,
    class_measure_exact,
    class_measure_mc,
    count_T_exact,
    count_T_filtered,
    delta_filter_sequence,
    dump_T_words,
    enumerate_T_words,
    g_window,
    trace_class,
    velocity_from_config,
)
from caflow.rules import ConeNotCovered, Window, elementary_rule, identity_rule, shift_rule

U2 = Uniform(2)
B13 = Bernoulli(("1/3", "2/3"))


def base(m, reach, seed=0):
    return sample_window(m, -reach, 2 * reach + 1, np.random.default_rng(seed))


# ------------------------------------------------------------ velocities


@pytest.mark.parametrize("v, n, G", [(("1/2", 2), 5, (3, 10)), ((0, 0), 7, (0, 0)), ((1, 0), 3, (3, 0))])
def test_linear_resolution(v, n, G):
    assert Linear(*v).resolve(n) == G


def test_sublinear_growth():
    sub = Sublinear("power", 1.0, 2.0, 0.5)
    gs = [sum(sub.resolve(n)) for n in (4, 16, 64, 256, 1024)]
    assert gs == sorted(gs) and gs[-1] > gs[0]
    assert sum(sub.resolve(10**6)) / 10**6 < 0.01
    log = Sublinear("log", 1.0, 1.0)
    assert log.resolve(7) == (math.ceil(math.log(8)),) * 2


@pytest.mark.parametrize(
    "cfg, kind",
    [
        ({"type": "linear", "v_minus": 2, "v_plus": "1/3"}, Linear),
        ([1, 1], Linear),
        ("pointwise", Pointwise),
        ({"type": "sublinear", "family": "log", "c": 2}, Sublinear),
    ],
)
def test_velocity_from_config(cfg, kind):
    assert isinstance(velocity_from_config(cfg), kind)


@pytest.mark.parametrize(
    "cfg",
    [{"type": "linear", "v_minus": -1, "v_plus": 0}, "fast", {"type": "sublinear", "gamma": 1.5}, 3],
)
def test_velocity_errors(cfg):
    with pytest.raises(ValueError):
        velocity_from_config(cfg)


def test_g_window():
    assert g_window(2, (3, 1)) == (-5, 3)
    with pytest.raises(ValueError):
        g_window(0, (-1, 0))
    with pytest.raises(ValueError):
        Pointwise().resolve(3)


# ------------------------------------------------------------ worked values


@pytest.mark.parametrize(
    "rule, p, n, want",
    [
        (identity_rule(2), 0, 3, math.log(1 / 2)),
        (shift_rule(2, 1), 0, 2, math.log(1 / 8)),
        (elementary_rule(90), 1, 2, math.log(2.0**-7)),
    ],
)
def test_class_measure_examples(rule, p, n, want):
    x = base(U2, p + 2 * n, seed=n)
    assert class_measure_exact(rule, U2, x, p, n) == pytest.approx(want)


@pytest.mark.parametrize(
    "rule, p, n, G, want",
    [
        (shift_rule(2, 1), 0, 2, (2, 2), 4),
        (identity_rule(2), 0, 3, (3, 3), 2**6),
        (identity_rule(2), 0, 1, (5, 5), 2**10),
        (elementary_rule(90), 1, 3, (3, 3), 1),
    ],
)
def test_count_examples(rule, p, n, G, want):
    x = base(U2, p + n + max(G), seed=4)
    res = count_T_exact(rule, U2, x, p, n, G)
    assert res.count_T == want
    assert res.window == g_window(p, G)


@pytest.mark.parametrize(
    "rule, p, n, exact",
    [(identity_rule(2), 0, 1, 1 / 2), (shift_rule(2, 1), 0, 4, 2.0**-5), (elementary_rule(90), 1, 3, 2.0**-9)],
)
def test_class_measure_mc_examples(rule, p, n, exact):
    x = base(U2, p + n, seed=2)
    est = class_measure_mc(rule, U2, x, p, n, 10_000, np.random.default_rng(9))
    sd = math.sqrt(exact * (1 - exact) / 10_000)
    assert abs(est.value - exact) <= 4 * sd


def test_mc_zero_hits_are_flagged():
    x = base(U2, 12, seed=1)
    est = class_measure_mc(elementary_rule(90), U2, x, 3, 8, 50, np.random.default_rng(0))
    assert est.zero_hits and est.upper_bound > 0


# ------------------------------------------------------------ oracle equivalence


@settings(max_examples=40, deadline=None)
@given(
    code=st.integers(0, 255),
    p=st.integers(0, 1),
    n=st.integers(1, 3),
    gm=st.integers(0, 4),
    gp=st.integers(0, 4),
    seed=st.integers(0, 2**32 - 1),
    biased=st.booleans(),
)
def test_dp_agrees_with_enumeration(code, p, n, gm, gp, seed, biased):
    rule = elementary_rule(code)
    m = B13 if biased else U2
    x = base(m, p + n + 4, seed)
    G = (gm, gp)
    res = count_T_exact(rule, m, x, p, n, G)
    ref = enumerate_class(rule, m, x, p, n, G)
    assert res.count_T == ref.count
    assert math.exp(res.class_log_measure) == pytest.approx(ref.class_measure, rel=1e-9)
    assert np.array_equal(enumerate_T_words(rule, m, x, p, n, G), ref.words)


@settings(max_examples=20, deadline=None)
@given(code=st.integers(0, 255), seed=st.integers(0, 2**32 - 1))
def test_sturmian_classes_agree_with_enumeration(code, seed):
    rule, m = elementary_rule(code), Sturmian()
    x = base(m, 5, seed)
    res = count_T_exact(rule, m, x, 1, 2, (2, 3))
    ref = enumerate_class(rule, m, x, 1, 2, (2, 3))
    assert res.count_T == ref.count
    assert math.exp(res.class_log_measure) == pytest.approx(ref.class_measure, rel=1e-9)


@pytest.mark.parametrize("code", [30, 90, 110])
def test_class_measures_partition_the_space(code):
    """Summing class measures over one representative per class gives 1."""
    rule, p, n = elementary_rule(code), 0, 2
    reach = p + n
    words = np.array([[(i >> j) & 1 for j in range(2 * reach, -1, -1)] for i in range(2 ** (2 * reach + 1))],
                     dtype=np.uint8)
    seen, total = set(), 0.0
    for w in words:
        x = Window(-reach, w)
        res = count_T_exact(rule, B13, x, p, n, (reach, reach))
        key = res.trace.key
        if key not in seen:
            seen.add(key)
            total += math.exp(res.class_log_measure)
    assert total == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(code=st.integers(0, 255), p=st.integers(0, 2), n=st.integers(1, 3), seed=st.integers(0, 2**32 - 1))
def test_uniform_class_measure_is_count_over_cone(code, p, n, seed):
    rule = elementary_rule(code)
    x = base(U2, p + n, seed)
    res = count_T_exact(rule, U2, x, p, n, (n, n))
    L = 2 * (p + n) + 1
    assert res.class_log_measure == pytest.approx(math.log(res.count_T) - L * math.log(2))


@settings(max_examples=30, deadline=None)
@given(code=st.integers(0, 255), p=st.integers(0, 1), n=st.integers(1, 3), seed=st.integers(0, 2**32 - 1))
def test_count_monotone(code, p, n, seed):
    rule = elementary_rule(code)
    x = base(U2, p + n + 3, seed)
    G = (n + 1, n + 1)
    fewer = count_T_exact(rule, U2, x, p, n - 1, G).count_T if n > 1 else None
    here = count_T_exact(rule, U2, x, p, n, G)
    wider = count_T_exact(rule, U2, x, p, n, (n + 2, n + 2))
    assert here.count_T >= 1
    # the class sits inside the union of its window cylinders
    words = enumerate_T_words(rule, U2, x, p, n, G)
    assert here.class_log_measure <= math.log(len(words)) - words.shape[1] * math.log(2) + 1e-12
    assert any(np.array_equal(w, x.segment(*here.window)) for w in words)
    if fewer is not None:
        assert here.count_T <= fewer
    assert wider.count_T >= here.count_T


def test_lumped_partition_identity():
    """With the window past the starred exponents, the class is the union of its window cylinders."""
    rule, p, n = shift_rule(2, 1), 1, 3
    x = base(B13, p + n + 2, seed=3)
    res = count_T_exact(rule, B13, x, p, n, (0, n))
    words = enumerate_T_words(rule, B13, x, p, n, (0, n))
    assert res.class_log_measure == pytest.approx(np.log(np.exp(B13.log_measure_rows(words)).sum()))


def test_dump_format():
    x = base(U2, 4, seed=1)
    text = dump_T_words(shift_rule(2, 1), U2, x, 0, 2, (2, 2))
    lines = text.strip().splitlines()
    assert len(lines) == 4 and all(len(s) == 5 and set(s) <= {"0", "1"} for s in lines)


def test_cover_checked():
    with pytest.raises(ConeNotCovered):
        count_T_exact(elementary_rule(90), U2, Window.from_word(-1, "010"), 1, 2, (0, 0))


# ------------------------------------------------------------ trace_class modes


def test_trace_class_modes():
    rule = elementary_rule(30)
    x = base(U2, 14, seed=5)
    rng = np.random.default_rng(0)
    exact = trace_class(rule, U2, x, 1, 6, (6, 6), rng=rng)
    assert exact.method != "monte_carlo" and not exact.lower_bound
    with pytest.raises(BudgetExceeded):
        trace_class(rule, U2, x, 1, 6, (6, 6), mode="exact-only", budget=1 << 8)
    mc = trace_class(rule, U2, x, 1, 6, (6, 6), budget=1 << 8, rng=rng, samples=20_000)
    assert mc.method == "monte_carlo" and mc.lower_bound
    assert 1 <= mc.count_T <= exact.count_T
    assert 0.0 <= mc.coverage <= 1.0
    with pytest.raises(ValueError):
        trace_class(rule, U2, x, 1, 6, (6, 6), mode="mc-only")
    with pytest.raises(ValueError):
        trace_class(rule, U2, x, 1, 6, (6, 6), mode="fast")


# ------------------------------------------------------------ delta filter


@pytest.mark.parametrize("delta", [0.05, 0.25, 0.9])
def test_uniform_filter_keeps_everything(delta):
    f = build_delta_filter(U2, 1, 3, (2, 2), delta)
    assert f.eta_n == 0.0 and f.retained_mass == 1.0


def test_bernoulli_filter_quantile():
    f = build_delta_filter(B13, 0, 1, (1, 2), 0.25)
    assert f.length == 4
    # weighted 75% quantile of |-log mu(w)/4 - h| over the 16 words
    h = B13.entropy()
    ones = np.arange(5)
    mult = np.array([math.comb(4, j) for j in ones])
    logm = ones * math.log(2 / 3) + (4 - ones) * math.log(1 / 3)
    dev = np.abs(-logm / 4 - h)
    prob = mult * np.exp(logm)
    order = np.argsort(dev)
    cum = np.cumsum(prob[order])
    want = dev[order][np.searchsorted(cum, 0.75 - 1e-12)]
    assert f.eta_n == pytest.approx(want)
    assert f.retained_mass >= 0.75


def test_sampled_filter_retains_mass():
    f = build_delta_filter(B13, 2, 40, (40, 40), 0.2, samples=5000, rng=np.random.default_rng(1), budget=64)
    assert f.method == "sampled" and f.retained_mass >= 0.8


def test_sturmian_filter_uses_admissible_words():
    f = build_delta_filter(Sturmian(), 1, 4, (4, 4), 0.1)
    assert math.isfinite(f.eta_n) and f.h_ref == 0.0


def test_filter_burn_in():
    fs = delta_filter_sequence(B13, 1, [2, 4, 8, 16], Linear(1, 1), 0.2)
    etas = [f.eta_n for f in fs]
    start = [2, 4, 8, 16].index(fs[0].burn_in)
    assert all(a >= b - 1e-9 for a, b in zip(etas[start:], etas[start + 1 :]))


def test_filter_rejects_bad_delta():
    with pytest.raises(ValueError):
        build_delta_filter(U2, 0, 1, (1, 1), 1.0)


@settings(max_examples=30, deadline=None)
@given(code=st.integers(0, 255), seed=st.integers(0, 2**32 - 1), delta=st.sampled_from([0.1, 0.5, 0.8]))
def test_filtered_count_bounds(code, seed, delta):
    rule = elementary_rule(code)
    x = base(B13, 5, seed)
    res = count_T_exact(rule, B13, x, 0, 2, (2, 2), with_histogram=True)
    filt = build_delta_filter(B13, 0, 2, (2, 2), delta)
    out = count_T_filtered(res, filt)
    assert 1 <= out.count_T <= res.count_T and out.filtered
    ref = enumerate_class(rule, B13, x, 0, 2, (2, 2))
    assert out.count_T == ref.filtered_count(filt.eta_n, filt.h_ref)


def test_filtered_examples():
    x = base(U2, 6, seed=2)
    res = count_T_exact(shift_rule(2, 1), U2, x, 0, 2, (2, 2), with_histogram=True)
    assert count_T_filtered(res, build_delta_filter(U2, 0, 2, (2, 2), 0.3)).count_T == res.count_T
    xb = base(B13, 6, seed=2)
    r90 = count_T_exact(elementary_rule(90), B13, xb, 1, 3, (3, 3), with_histogram=True)
    assert count_T_filtered(r90, build_delta_filter(B13, 1, 3, (3, 3), 0.5)).count_T == 1
    with pytest.raises(ValueError):
        count_T_filtered(res, build_delta_filter(U2, 0, 2, (1, 2), 0.3))
