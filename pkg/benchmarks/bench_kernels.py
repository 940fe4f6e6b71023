"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py --repeat 5
"""

import argparse
import time

import numpy as np

from caflow import _kernels_py
from caflow.catalog import get_rule
from caflow.dp import _fits_packed

try:
    from caflow import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    for name, n in [("rule30", 6), ("rule110", 8), ("prod2", 2)]:
        rule = get_rule(name)
        lo, hi = rule.cone_span
        args = (rule.compact_table(), rule.k, hi - lo + 1, -lo, n, _fits_packed(rule.k, n))
        yield f"build_columns {name} n={n}", "build_columns", args
    for k, S in [(2, 14), (4, 7)]:
        K = k**S
        W = rng.random((1, k))
        check = rng.random(K * k) < 0.7
        yield f"weight_step k={k} S={S}", "weight_step", (rng.random(K), k, W, check)
        yield f"alive_step k={k} S={S}", "alive_step", (rng.random(K) < 0.5, k, W > 0, check)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(args.seed)
    print(f"{'case':<32}{'numpy [s]':>12}{'cython [s]':>12}{'speedup':>10}")
    for label, fn, call in cases(rng):
        py = best_of(lambda: getattr(_kernels_py, fn)(*call), args.repeat)
        if _ckernels is None:
            print(f"{label:<32}{py:>12.4f}{'-':>12}{'-':>10}")
            continue
        cy = best_of(lambda: getattr(_ckernels, fn)(*call), args.repeat)
        same = np.array_equal(getattr(_kernels_py, fn)(*call), getattr(_ckernels, fn)(*call))
        note = "" if same else "  MISMATCH"
        print(f"{label:<32}{py:>12.4f}{cy:>12.4f}{py / cy:>9.1f}x{note}")


if __name__ == "__main__":
    main()
