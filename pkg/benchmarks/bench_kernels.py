"""Time the compiled kernels against the pure-Python reference kernels.

Usage::

    python benchmarks/bench_kernels.py [--repeat 3]

Each line reports the best wall time per backend, the speed-up and the
largest absolute difference between the two outputs.
"""
import argparse
import time

import numpy as np

from drlogcon import _pykernels

try:
    from drlogcon import _native
except ImportError:  # extension not built
    _native = None


def best_time(func, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = func()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(rng):
    y = np.cumsum(rng.normal(size=200_000)) + rng.normal(scale=50, size=200_000)
    yield "pava n=2e5", lambda mod: mod.pava(y), lambda r: r

    n = 100_000
    x = np.arange(1, n + 1) / n
    z = 12 * (x - 0.5) ** 2 + rng.normal(size=n)
    yield "convex_lse n=1e5", lambda mod: mod.convex_lse_solve(x, z), lambda r: r[0]

    t = np.sort(rng.normal(size=2000))
    w = np.full(t.size, 1.0 / t.size)
    yield "logconcave m=2000", lambda mod: mod.logconcave_solve(t, w), lambda r: r[0]

    a = rng.normal(size=1_000_000)
    b = a + rng.normal(scale=1e-3, size=a.size) * rng.integers(0, 2, size=a.size)
    yield "jfuncs 1e6 pairs", lambda mod: mod.jfuncs(a, b), lambda r: r[0]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if _native is None:
        print("compiled extension not available; only the reference backend can run")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<20}{'native s':>11}{'python s':>11}{'speed-up':>10}{'max diff':>11}")
    for name, run, pick in cases(rng):
        tn, rn = best_time(lambda: run(_native), args.repeat)
        tp, rp = best_time(lambda: run(_pykernels), args.repeat)
        diff = float(np.max(np.abs(np.asarray(pick(rn)) - np.asarray(pick(rp)))))
        print(f"{name:<20}{tn:>11.4f}{tp:>11.4f}{tp / tn:>9.1f}x{diff:>11.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
