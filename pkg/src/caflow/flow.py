"""Entropy estimates, the density flow and the entropy theorems.

The density-flow integrand of a base point ``x`` is

    1 - log #<T>(x) / (-log mu([x] on the window)),

where ``#<T>`` counts the delta-filtered window words shown by the trace
class of ``x``. It is averaged over base points, tabulated along an ``n``
grid for every ``(p, delta)``, and aggregated by a max over ``p``.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .dp import DEFAULT_BUDGET, BudgetExceeded
from .measures import MeasureModel, invariance_check, shift_entropy
from .partitions import (
    Linear,
    Pointwise,
    Sublinear,
    VelocitySpec,
    build_delta_filter,
    class_measure_exact,
    class_measure_mc,
    count_T_filtered,
    effective_cone,
    g_window,
    trace_class,
)
from .perturbation import average_exponents, influence_region, lyapunov_star
from .rules import LocalRule, Window

__all__ = [
    "DensityFlow",
    "EntropyEstimate",
    "FlowEstimate",
    "FlowPoint",
    "TheoremReport",
    "TrendFit",
    "density_flow",
    "entropy_F_estimate",
    "entropy_shift_estimate",
    "fit_rational_trend",
    "flow_at",
    "flow_grid",
    "cell_seeds",
    "starred_exponents",
    "verify_theorem1",
    "verify_theorem2",
]

log = logging.getLogger(__name__)

CLAMP_SLACK = 1e-12


def _child(rng: np.random.Generator) -> np.random.Generator:
    return np.random.default_rng(int(rng.integers(0, 2**63 - 1)))


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


# ------------------------------------------------------------ trend fits


@dataclass(frozen=True)
class TrendFit:
    """``y ~ a + b / (n + c)``; ``a`` is the extrapolated limit."""

    a: float
    b: float
    c: float
    rms: float
    points: int
    method: str

    def __call__(self, n):
        return self.a + self.b / (np.asarray(n, dtype=float) + self.c)


def _model(n, a, b, c):
    return a + b / (n + c)


def fit_rational_trend(ns: Sequence[float], values: Sequence[float]) -> Optional[TrendFit]:
    """Fit ``a + b/(n + c)``: exact through three points, least squares beyond.

    The relation ``(y - a)(n + c) = b`` is linear in ``(c, a, b + a*c)``,
    which gives the starting point; a nonlinear refinement follows when
    there are more than three points. Degenerate data fall back to a
    constant or to ``c = 0``.
    """
    n = np.asarray(ns, dtype=float)
    y = np.asarray(values, dtype=float)
    ok = np.isfinite(y)
    n, y = n[ok], y[ok]
    if n.size == 0:
        return None
    if n.size == 1 or np.ptp(y) < 1e-12:
        return TrendFit(float(y[-1]), 0.0, 0.0, 0.0, int(n.size), "constant")
    if n.size == 2:
        A = np.column_stack([np.ones_like(n), 1.0 / n])
        (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
        return TrendFit(float(a), float(b), 0.0, 0.0, 2, "inverse_n")
    A = np.column_stack([y, -n, -np.ones_like(n)])
    sol, _, rank, _ = np.linalg.lstsq(A, -y * n, rcond=None)
    if rank == 3 and (n + sol[0]).min() > 0:
        c, a, d = sol
        b = d - a * c
        p0 = [a, b, c]
        method = "exact3" if n.size == 3 else "least_squares"
        if n.size > 3:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", OptimizeWarning)
                    p0, _ = curve_fit(_model, n, y, p0=p0, maxfev=20000)
            except (RuntimeError, ValueError):
                pass
        a, b, c = (float(v) for v in p0)
        if (n + c).min() > 0:
            rms = float(np.sqrt(np.mean((_model(n, a, b, c) - y) ** 2)))
            return TrendFit(a, b, c, rms, int(n.size), method)
    A = np.column_stack([np.ones_like(n), 1.0 / n])
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    rms = float(np.sqrt(np.mean((a + b / n - y) ** 2)))
    return TrendFit(float(a), float(b), 0.0, rms, int(n.size), "inverse_n")


# ------------------------------------------------------------ entropies


@dataclass(frozen=True)
class EntropyEstimate:
    target: str
    p: int
    n: int
    value: float
    stderr: float
    method: str
    sequence: tuple = ()
    extrapolated: Optional[float] = None
    invariance: Optional[dict] = None

    @property
    def headline(self) -> float:
        return self.extrapolated if self.extrapolated is not None else self.value


def entropy_shift_estimate(m: MeasureModel, length: int, samples: int,
                           rng: np.random.Generator, chunk: int = 1000) -> EntropyEstimate:
    """Empirical ``-log mu(w) / len`` over sampled words (SMB sampling)."""
    vals = []
    left = samples
    while left > 0:
        size = min(chunk, left)
        words = m.sample_words(length, rng, size)
        vals.append(-m.log_measure_rows(words) / length)
        left -= size
    v, se = _mean_se(np.concatenate(vals))
    return EntropyEstimate("shift", 0, length, v, se, "smb_mc")


def _class_entropy(rule, m, x, p, n, budget, mc_samples, rng) -> tuple[float, bool]:
    try:
        return -class_measure_exact(rule, m, x, p, n, budget) / n, True
    except BudgetExceeded:
        est = class_measure_mc(rule, m, x, p, n, mc_samples, rng)
        value = est.value if est.hits else est.upper_bound
        return -math.log(value) / n, False


def entropy_F_estimate(rule: LocalRule, m: MeasureModel, p: int, n, samples: int,
                       rng: np.random.Generator, budget: int = DEFAULT_BUDGET,
                       mc_samples: int = 20000, check_invariance: bool = True) -> EntropyEstimate:
    """Average of ``-(1/n) log mu(class of x)`` over base points from ``m``.

    ``n`` may be a grid; the value reported is the last one and the
    rational-trend fit over the grid gives the extrapolation.
    """
    n_list = [int(n)] if np.isscalar(n) else [int(v) for v in n]
    if not n_list or min(n_list) < 1:
        raise ValueError("n must be >= 1")
    inv = None
    if check_invariance:
        rep = invariance_check(m, rule, 3, 2000, 0.01, _child(rng))
        inv = asdict(rep)
        if not rep.passed:
            log.warning("measure %s does not look invariant under %s", m.label, rule.label)
    seq, all_exact = [], True
    for nn in n_list:
        lo, hi = effective_cone(rule, p, nn)
        words = m.sample_words(hi - lo + 1, rng, samples)
        vals = []
        for w in words:
            v, exact = _class_entropy(rule, m, Window(lo, w), p, nn, budget, mc_samples, rng)
            vals.append(v)
            all_exact &= exact
        mean, se = _mean_se(vals)
        seq.append((nn, mean, se))
    fit = fit_rational_trend([s[0] for s in seq], [s[1] for s in seq]) if len(seq) >= 3 else None
    method = "exact_class" if all_exact else "smb_mc"
    last = seq[-1]
    return EntropyEstimate("automaton", p, last[0], last[1], last[2], method, tuple(seq),
                           fit.a if fit else None, inv)


# ------------------------------------------------------------ density flow


@dataclass(frozen=True)
class FlowPoint:
    x: str
    G: tuple[int, int]
    count_T: int
    count_T_filtered: int
    class_log_measure: float
    g_window_log_measure: float
    raw: float
    integrand: float
    weight: float
    clamped: bool
    exact: bool


@dataclass(frozen=True)
class FlowEstimate:
    velocity: VelocitySpec
    p: int
    n: int
    delta: float
    M_value: float
    stderr: float
    points: tuple = field(default=(), repr=False)
    clamp_count: int = 0
    mode: str = "exact"
    lower_bound: bool = False
    G: Optional[tuple[int, int]] = None
    eta: Optional[float] = None
    seed: Optional[int] = None

    @property
    def samples(self) -> int:
        return len(self.points)

    @property
    def v_minus(self) -> str:
        return self.velocity.describe()[0]

    @property
    def v_plus(self) -> str:
        return self.velocity.describe()[1]


def starred_exponents(rule: LocalRule, x: Window, p: int, n: int, budget: int,
                      rng: np.random.Generator, member_budget: int = 4096):
    rec = lyapunov_star(rule, x, p, n, budget, rng, member_budget)
    return rec.i_plus, rec.i_minus, rec.mode == "exact"


def _integrand(count: int, x_log_measure: float) -> tuple[float, float, bool]:
    denom = -x_log_measure
    if not denom > 0:
        return 0.0, 0.0, True
    raw = 1.0 - math.log(count) / denom
    val = min(1.0, max(0.0, raw))
    return raw, val, not (-CLAMP_SLACK <= raw <= 1 + CLAMP_SLACK)


def flow_at(rule: LocalRule, m: MeasureModel, p: int, n: int, delta: float,
            velocity: VelocitySpec, samples: int, rng: np.random.Generator, *,
            budget: int = DEFAULT_BUDGET, mode: str = "exact-first", mc_samples: int = 4096,
            filter_samples: int = 4096, member_budget: int = 4096) -> FlowEstimate:
    """Average of the clamped integrand over ``samples`` base points."""
    pointwise = isinstance(velocity, Pointwise)
    G = None
    if not pointwise:
        G = velocity.resolve(n)
        if G == (0, 0):
            raise ValueError(f"velocity {velocity} gives an empty window at n={n}")
    filters: dict = {}

    def filter_for(Gx):
        if Gx not in filters:
            filters[Gx] = build_delta_filter(m, p, n, Gx, delta, filter_samples, rng)
        return filters[Gx]

    lo, hi = effective_cone(rule, p, n)
    if pointwise:
        a, b = influence_region(rule, n)
        lo, hi = min(lo, a), max(hi, b)
    else:
        wl, wh = g_window(p, G)
        lo, hi = min(lo, wl), max(hi, wh)
    words = m.sample_words(hi - lo + 1, rng, samples)
    points, all_exact, lower = [], True, False
    for w in words:
        x = Window(lo, w)
        weight = 1.0
        Gx = G
        if pointwise:
            i_plus, i_minus, exact_star = starred_exponents(rule, x, p, n, budget, rng, member_budget)
            all_exact &= exact_star
            Gx = (i_plus, i_minus)
            weight = (i_plus + i_minus) / n
            if Gx == (0, 0):
                points.append(FlowPoint(f"{x.offset}:{x.word()}", Gx, 0, 0, float("nan"),
                                        float("nan"), 0.0, 0.0, 0.0, False, exact_star))
                continue
            wl, wh = g_window(p, Gx)
            if not x.covers(wl, wh):
                x = m.extend(x, min(lo, wl), max(hi, wh), rng)
        res = trace_class(rule, m, x, p, n, Gx, mode=mode, budget=budget,
                          samples=mc_samples, rng=rng)
        filt = filter_for(Gx)
        fres = count_T_filtered(res, filt, m)
        raw, val, clamped = _integrand(fres.count_T, res.x_log_measure)
        exact = not res.lower_bound and filt.method == "exact"
        all_exact &= exact
        lower |= res.lower_bound
        points.append(FlowPoint(f"{x.offset}:{x.word()}", Gx, res.count_T, fres.count_T,
                                res.class_log_measure, res.x_log_measure, raw,
                                val * weight, weight, clamped, exact))
    if pointwise and all(pt.G == (0, 0) for pt in points):
        raise ValueError("pointwise exponents vanish at every sampled point")
    M, se = _mean_se([pt.integrand for pt in points])
    eta = filters[G].eta_n if G is not None and G in filters else None
    return FlowEstimate(
        velocity, p, n, delta, M, se, tuple(points), sum(pt.clamped for pt in points),
        "exact" if all_exact else ("lower_bound" if lower else "sampled"), lower, G, eta,
    )


@dataclass
class DensityFlow:
    """Curves in ``n`` for every ``(p, delta)`` and their aggregate."""

    velocity: VelocitySpec
    M_value: float
    stderr: float
    p_star: int
    delta: float
    curves: dict = field(repr=False)
    fits: dict = field(default_factory=dict)
    M_extrapolated: Optional[float] = None
    p_star_extrapolated: Optional[int] = None
    mode: str = "exact"
    clamp_count: int = 0

    @property
    def headline(self) -> float:
        return self.M_extrapolated if self.M_extrapolated is not None else self.M_value

    def curve(self, p: int, delta: Optional[float] = None) -> list[FlowEstimate]:
        return self.curves[(p, self.delta if delta is None else delta)]


def cell_seeds(seed: int, cells) -> list[int]:
    """One independent 63-bit seed per grid cell, fixed by the cell order."""
    children = np.random.SeedSequence(seed).spawn(len(cells))
    return [int(c.generate_state(1, np.uint64)[0] >> np.uint64(1)) for c in children]


def _run_cell(args):
    rule, m, p, n, d, velocity, samples, seed, kwargs = args
    est = flow_at(rule, m, p, n, d, velocity, samples, np.random.default_rng(seed), **kwargs)
    return replace(est, seed=seed)


def density_flow(rule: LocalRule, m: MeasureModel, p_list, n_list, delta_list,
                 velocity: VelocitySpec, samples: int, rng: np.random.Generator,
                 workers: int = 1, **kwargs) -> DensityFlow:
    """Run the ``(p, delta, n)`` grid and aggregate.

    Each cell draws from its own generator, so neither the evaluation order
    nor the number of workers changes any value.
    """
    return flow_grid(rule, m, p_list, n_list, delta_list, velocity, samples,
                     int(rng.integers(0, 2**63 - 1)), workers, **kwargs)


def flow_grid(rule: LocalRule, m: MeasureModel, p_list, n_list, delta_list,
              velocity: VelocitySpec, samples: int, seed: int, workers: int = 1,
              **kwargs) -> DensityFlow:
    p_list, n_list = [int(v) for v in p_list], [int(v) for v in n_list]
    delta_list = [float(v) for v in delta_list]
    if not p_list or not n_list or not delta_list:
        raise ValueError("grids must be non-empty")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n grid must be increasing")
    if any(b >= a for a, b in zip(delta_list, delta_list[1:])):
        raise ValueError("delta grid must be decreasing")
    cells = [(p, d, n) for p in p_list for d in delta_list for n in n_list]
    seeds = cell_seeds(seed, cells)
    jobs = [(rule, m, p, n, d, velocity, samples, s, kwargs) for (p, d, n), s in zip(cells, seeds)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    curves: dict = {}
    for (p, d, n), est in zip(cells, results):
        curves.setdefault((p, d), []).append(est)
    return aggregate_flow(velocity, curves, p_list, delta_list[-1])


def aggregate_flow(velocity: VelocitySpec, curves: dict, p_list, delta: float) -> DensityFlow:
    """Max over ``p`` of the smallest-``delta`` tails, plus per-curve trend fits."""
    tails = {p: curves[(p, delta)][-1] for p in p_list}
    p_star = max(p_list, key=lambda p: (tails[p].M_value, -p))
    fits = {}
    for (p, d), curve in curves.items():
        if len(curve) >= 3:
            fits[(p, d)] = fit_rational_trend([c.n for c in curve], [c.M_value for c in curve])
    ext, p_ext = None, None
    small = {p: fits[(p, delta)] for p in p_list if (p, delta) in fits}
    if small:
        p_ext = max(small, key=lambda p: (small[p].a, -p))
        ext = small[p_ext].a
    modes = {c.mode for cv in curves.values() for c in cv}
    mode = "exact" if modes == {"exact"} else ("lower_bound" if "lower_bound" in modes else "sampled")
    clamps = sum(c.clamp_count for cv in curves.values() for c in cv)
    return DensityFlow(velocity, tails[p_star].M_value, tails[p_star].stderr, p_star, delta,
                       curves, fits, ext, p_ext, mode, clamps)


# ------------------------------------------------------------ theorems


@dataclass
class TheoremReport:
    theorem: str
    lhs: float
    rhs: float
    relation: str
    margin: float
    tolerance: float
    passed: bool
    inputs: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _judge(lhs, rhs, relation, tol) -> tuple[float, bool]:
    if relation == "=":
        margin = lhs - rhs
        return margin, abs(margin) <= tol
    if relation == "<=":
        margin = rhs - lhs
        return margin, margin >= -tol
    margin = lhs - rhs  # ">="
    return margin, margin >= -tol


def _tolerance(lhs, rhs, se, rel) -> float:
    return rel * max(abs(lhs), abs(rhs)) + 3.0 * se + 1e-9


def verify_theorem1(rule: LocalRule, m: MeasureModel, n_list, p: int, samples: int,
                    rng: np.random.Generator, *, budget: int = DEFAULT_BUDGET,
                    exponent_samples: int = 32, rel_tol: float = 0.05) -> TheoremReport:
    """``h(F) <= h(shift) * (I+ + I-)`` with averaged exponents at the largest ``n``."""
    n_list = [int(n_list)] if np.isscalar(n_list) else [int(v) for v in n_list]
    hF = entropy_F_estimate(rule, m, p, n_list, samples, _child(rng), budget)
    exps = average_exponents(rule, m, n_list[-1], exponent_samples, _child(rng), budget)
    h_s = shift_entropy(m)
    lhs = hF.headline
    rhs = h_s * (exps.plus + exps.minus)
    se = math.hypot(hF.stderr, h_s * math.hypot(exps.plus_stderr, exps.minus_stderr))
    tol = _tolerance(lhs, rhs, se, rel_tol)
    margin, ok = _judge(lhs, rhs, "<=", tol)
    warnings = []
    if hF.invariance and not hF.invariance["passed"]:
        warnings.append("invariance check failed")
    if exps.mode != "exact":
        warnings.append("exponents are sampled lower bounds")
    return TheoremReport(
        "T1", lhs, rhs, "<=", margin, tol, ok,
        inputs={"rule": rule.label, "measure": m.label, "p": p, "n": n_list},
        warnings=warnings,
        details={"h_shift": h_s, "I_plus": exps.plus, "I_minus": exps.minus,
                 "h_F_sequence": list(hF.sequence), "gap": rhs - lhs,
                 "h_F_method": hF.method, "invariance": hF.invariance},
    )


def _dominance(rule, m, velocity, p, n, points, budget, rng) -> tuple[float, float, bool]:
    """Largest sampled ``I+*_n/n`` and ``I-*_n/n``; the flag says whether all were exact."""
    a, b = influence_region(rule, n)
    lo, hi = effective_cone(rule, p, n)
    lo, hi = min(lo, a), max(hi, b)
    words = m.sample_words(hi - lo + 1, rng, points)
    best_p, best_m, exact = 0, 0, True
    for w in words:
        ip, im, ex = starred_exponents(rule, Window(lo, w), p, n, budget, rng)
        best_p, best_m = max(best_p, ip), max(best_m, im)
        exact &= ex
    return best_p / n, best_m / n, exact


def verify_theorem2(rule: LocalRule, m: MeasureModel, velocity: VelocitySpec, p_list, n_list,
                    delta_list, samples: int, rng: np.random.Generator, form: str = "i", *,
                    entropy_samples: Optional[int] = None, star_points: int = 8,
                    rel_tol: float = 0.05, **kwargs) -> TheoremReport:
    """Theorem 2 in form (i) equality, (ii) inequality or (iii) pointwise equality.

    Both sides use the rational-trend extrapolations when the ``n`` grid
    has at least three points. Form (i) needs the velocity to dominate the
    starred exponents; without evidence it is downgraded to (ii).
    """
    mode = form.lower().removeprefix("t2")
    if mode not in ("i", "ii", "iii"):
        raise ValueError(f"unknown theorem form {form!r}")
    if mode == "iii":
        velocity = Pointwise()
    elif isinstance(velocity, Pointwise):
        raise ValueError("forms (i) and (ii) need a linear or sublinear velocity")
    p_list = [int(v) for v in p_list]
    n_list = [int(v) for v in n_list]
    warnings: list = []
    budget = kwargs.get("budget", DEFAULT_BUDGET)
    hF = entropy_F_estimate(rule, m, max(p_list), n_list, entropy_samples or samples,
                            _child(rng), budget)
    h_s = shift_entropy(m)
    dominance = None
    if mode == "i":
        sp, sm, dom_exact = _dominance(rule, m, velocity, max(p_list), n_list[-1], star_points, budget,
                            _child(rng))
        if isinstance(velocity, Linear):
            vm, vp = float(velocity.v_minus), float(velocity.v_plus)
        else:
            vm = vp = 0.0
        ok = vm >= sp - 1e-12 and vp >= sm - 1e-12
        dominance = {"I_plus_star": sp, "I_minus_star": sm, "v_minus": vm, "v_plus": vp,
                     "holds": ok, "exact": dom_exact}
        if not ok:
            warnings.append("velocity does not dominate the sampled starred exponents; "
                            "checking form (ii) instead")
            mode = "ii"
        elif dom_exact:
            warnings.append("dominance evidenced on sampled points (the supremum is assumed)")
        else:
            warnings.append("dominance assumed: starred exponents are sampled lower bounds")
    if isinstance(velocity, Sublinear) and mode != "iii":
        warnings.append("sublinear velocity: the right-hand side vanishes")
    flow = density_flow(rule, m, p_list, n_list, delta_list, velocity, samples, _child(rng),
                        **kwargs)
    M = flow.headline
    if mode == "iii":
        rhs = h_s * M
    else:
        rhs = h_s * velocity.total * M
    relation = ">=" if mode == "ii" else "="
    lhs = hF.headline
    scale = 1.0 if mode == "iii" else max(velocity.total, 1.0)
    se = math.hypot(hF.stderr, h_s * scale * flow.stderr)
    tol = _tolerance(lhs, rhs, se, rel_tol)
    margin, ok = _judge(lhs, rhs, relation, tol)
    if hF.invariance and not hF.invariance["passed"]:
        warnings.append("invariance check failed")
    if flow.clamp_count:
        warnings.append(f"{flow.clamp_count} integrand values were clamped")
    if flow.mode != "exact":
        warnings.append(f"flow estimates are {flow.mode}")
    return TheoremReport(
        f"T2{mode}", lhs, rhs, relation, margin, tol, ok,
        inputs={"rule": rule.label, "measure": m.label, "velocity": list(velocity.describe()),
                "p": p_list, "n": n_list, "delta": list(delta_list)},
        warnings=warnings,
        details={"h_shift": h_s, "M": M, "M_tail": flow.M_value, "M_fit": flow.M_extrapolated,
                 "p_star": flow.p_star, "h_F_sequence": list(hF.sequence),
                 "dominance": dominance},
    )
