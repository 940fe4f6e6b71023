import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caflow.rules import (
    Alphabet,
    ConeNotCovered,
    LocalRule,
    RuleError,
    Window,
    batch_traces,
    compact_trace,
    elementary_rule,
    evolve,
    format_rule,
    format_window,
    identity_rule,
    make_rule,
    parse_rule,
    parse_window,
    product_rule,
    shift_rule,
    spacetime,
    step,
    trace_of,
)


def naive_step(rule: LocalRule, word):
    r, k = rule.radius, rule.k
    out = []
    for q in range(r, len(word) - r):
        idx = 0
        for a in word[q - r : q + r + 1]:
            idx = idx * k + int(a)
        out.append(int(rule.table[idx]))
    return out


words = st.lists(st.integers(0, 1), min_size=7, max_size=40)


def test_elementary_bit_convention():
    r30 = elementary_rule(30)
    # 30 = 0b00011110: neighborhoods 1,2,3,4 map to 1
    assert [r30(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)] == [0, 1, 1, 1, 1, 0, 0, 0]
    assert elementary_rule(204).span == (0, 0)
    with pytest.raises(RuleError):
        elementary_rule(256)


def test_shift_moves_left():
    w = Window.from_word(0, "0011010")
    out = step(shift_rule(2, 1), w)
    assert out.offset == 1
    assert out.word() == "11010"  # (Fx)_i = x_{i+1} on [1, 5]
    assert shift_rule(2, 1).cone_span == (0, 1)
    assert shift_rule(2, 2).label == "shift2"
    assert identity_rule(3).radius == 0


@given(code=st.integers(0, 255), word=words)
def test_step_matches_naive_loop(code, word):
    rule = elementary_rule(code)
    out = step(rule, Window(0, np.array(word, dtype=np.uint8)))
    assert out.symbols.tolist() == naive_step(rule, word)


@given(code=st.integers(0, 255), word=words)
def test_mirror_is_reflection(code, word):
    rule = elementary_rule(code)
    w = Window(-3, np.array(word, dtype=np.uint8))
    assert step(rule.mirror(), w.mirror()) == step(rule, w).mirror()
    assert rule.mirror().mirror() == rule


@pytest.mark.parametrize(
    "code, perm",
    [(90, (True, True)), (150, (True, True)), (30, (True, False)), (86, (False, True)), (204, (False, False))],
)
def test_permutivity(code, perm):
    assert elementary_rule(code).permutive() == perm


@pytest.mark.parametrize("code, span", [(0, (0, 0)), (170, (1, 1)), (240, (-1, -1)), (90, (-1, 1))])
def test_span_and_cone_span(code, span):
    rule = elementary_rule(code)
    assert rule.span == span
    lo, hi = rule.cone_span
    assert lo <= 0 <= hi and lo <= span[0] and hi >= span[1]


def test_make_rule_forms():
    xor = make_rule(2, 1, lambda a, b, c: a ^ c)
    assert xor == elementary_rule(90)
    assert make_rule(2, 1, {(a, b, c): (a ^ c) for a in (0, 1) for b in (0, 1) for c in (0, 1)}) == xor
    with pytest.raises(RuleError):
        make_rule(2, 1, {(0, 0, 0): 0})
    with pytest.raises(RuleError):
        make_rule(2, 1, [0, 1, 2, 0, 0, 0, 0, 0])


@given(
    a=st.lists(st.integers(0, 1), min_size=9, max_size=20),
    b=st.data(),
)
def test_product_components_evolve_independently(a, b):
    bw = b.draw(st.lists(st.integers(0, 1), min_size=len(a), max_size=len(a)))
    prod = product_rule(shift_rule(2, 1), shift_rule(2, 2))
    assert prod.k == 4 and prod.radius == 2
    alph = prod.alphabet
    w = Window(0, alph.join([np.array(a), np.array(bw)]))
    out = step(prod, w)
    pa, pb = alph.split(out.symbols)
    assert pa.tolist() == list(a[3 : 3 + len(pa)])
    assert pb.tolist() == list(bw[4 : 4 + len(pb)])


def test_alphabet_split_join_roundtrip():
    alph = Alphabet(6, (2, 3))
    sym = np.arange(6)
    parts = alph.split(sym)
    assert parts[0].tolist() == [0, 0, 0, 1, 1, 1]
    assert alph.join(parts).tolist() == sym.tolist()
    with pytest.raises(ValueError):
        Alphabet(6, (2, 2))


def test_window_operations():
    w = Window.from_word(-2, "01101")
    assert (w.lo, w.hi) == (-2, 2)
    assert w.at(0) == 1 and w.at(-2) == 0
    assert w.restrict(-1, 1).word() == "110"
    assert w.mirror() == Window.from_word(-2, "10110")
    assert w.replace(0, 0).word() == "01001"
    with pytest.raises(ConeNotCovered):
        w.restrict(-3, 0)
    with pytest.raises(IndexError):
        w.at(5)


@settings(max_examples=60)
@given(code=st.integers(0, 255), p=st.integers(0, 2), n=st.integers(0, 4), seed=st.integers(0, 2**32 - 1))
def test_compact_trace_equals_full_evolution(code, p, n, seed):
    rule = elementary_rule(code)
    rng = np.random.default_rng(seed)
    reach = p + n
    w = Window(-reach, rng.integers(0, 2, 2 * reach + 1).astype(np.uint8))
    rows = spacetime(rule, w, n)
    expected = np.array([r.segment(-p, p) for r in rows])
    tr = trace_of(rule, w, p, n)
    assert np.array_equal(tr.rows, expected)
    lo, hi = rule.cone_span
    cone = w.segment(-p + n * lo, p + n * hi)[None, :]
    assert np.array_equal(batch_traces(rule, cone, p, n)[0], expected)


def test_trace_needs_cone():
    w = Window.from_word(-2, "01101")
    with pytest.raises(ConeNotCovered):
        trace_of(elementary_rule(90), w, 1, 2)
    # a one-sided rule gets by with the cells it actually reads
    assert compact_trace(shift_rule(2, 1), Window.from_word(0, "0110"), 0, 3).words() == ["0", "1", "1", "0"]


def test_evolve_shortens_by_radius():
    w = Window.from_word(-5, "01101001110")
    out = evolve(elementary_rule(110), w, 3)
    assert (out.lo, out.hi) == (-2, 2)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=12), st.integers(-20, 20))
def test_window_text_roundtrip(sym, off):
    alph = Alphabet(4, (2, 2))
    w = Window(off, np.array(sym, dtype=np.uint8))
    assert parse_window(format_window(w, alph), alph) == w
    assert parse_window(format_window(w)) == w


def test_product_window_format():
    alph = Alphabet(4, (2, 2))
    w = Window(0, np.array([0, 1, 2, 3], dtype=np.uint8))
    assert format_window(w, alph) == "0:00,01,10,11"


@pytest.mark.parametrize("rule", [elementary_rule(110), shift_rule(3, 2), identity_rule(2)])
def test_rule_text_roundtrip(rule, tmp_path):
    text = format_rule(rule)
    back = parse_rule(text)
    assert back == rule and back.label == rule.label


def test_parse_rule_errors():
    with pytest.raises(RuleError):
        parse_rule("k=2\n0 1 0 1")
    with pytest.raises(RuleError):
        parse_rule("k=2 r=1\n0 1")
