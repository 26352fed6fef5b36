"""Compiled vs pure-Python kernels: wall time and output agreement.

Run ``python3 benchmarks/bench_kernels.py`` after building the extension.
"""

import argparse
import time

import numpy as np

from minkalpha import _pykernels

try:
    from minkalpha import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def same(a, b):
    return all(np.array_equal(np.asarray(x), np.asarray(y)) for x, y in zip(a, b))


def llt_case(n, rng):
    x = np.linspace(-5, 5, n)
    v = 0.5 * x**2 + 0.1 * rng.standard_normal(n)
    s = np.linspace(-6, 6, n)
    return x, v, s


def ot_case(n, rng):
    a = rng.uniform(0.5, 1.0, n)
    b = rng.uniform(0.5, 1.0, n)
    a /= a.sum()
    b /= b.sum()
    x = rng.standard_normal((n, 2))
    y = rng.standard_normal((n, 2))
    return a, b, -(x @ y.T)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    if _ckernels is None:
        print("compiled kernels not built; only the pure-Python timings are shown")
    print(f"{'kernel':<16}{'size':>8}{'python s':>12}{'cython s':>12}{'speedup':>10}  identical")
    rows = [("llt_conjugate_1d", n, _pykernels.llt_conjugate_1d,
             _ckernels and _ckernels.llt_conjugate_1d, llt_case(n, rng)) for n in (1_000, 10_000, 100_000)]
    rows += [("network_simplex", n, _pykernels.network_simplex,
              _ckernels and _ckernels.network_simplex, ot_case(n, rng)) for n in (20, 50, 100)]
    for name, n, py, cy, case in rows:
        tp, op = best_of(lambda: py(*case), args.repeat)
        if cy:
            tc, oc = best_of(lambda: cy(*case), args.repeat)
            print(f"{name:<16}{n:>8}{tp:>12.4f}{tc:>12.5f}{tp / tc:>10.1f}  {same(op, oc)}")
        else:
            print(f"{name:<16}{n:>8}{tp:>12.4f}{'-':>12}{'-':>10}  -")


if __name__ == "__main__":
    main()
