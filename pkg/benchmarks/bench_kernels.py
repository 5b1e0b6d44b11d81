"""Wall-clock comparison of the numba and numpy kernel paths.

Run with ``python benchmarks/bench_kernels.py [--repeat R] [--quick]``.
Each kernel is called once to trigger compilation, then timed ``R`` times;
the best time is reported together with the max abs difference of outputs.
"""

import argparse
import time

import numpy as np

from otlab import kernels
from otlab.fixtures import grid2d, regular_polygon


def _best(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _diff(a, b):
    if isinstance(a, tuple):
        return max(_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float))))


def cases(quick):
    rng = np.random.default_rng(0)
    n = 400 if quick else 1500
    logk = rng.normal(size=(n, n))
    a = rng.normal(size=n)
    yield "lse_rows", (logk, a)
    yield "gibbs_rows", (logk, a)
    k = 150 if quick else 400
    yield "log_matmul", (rng.normal(size=(k, k)) - 700.0, rng.normal(size=(k, k)) - 700.0)
    d = np.abs(rng.normal(size=(n // 4, 4 * n)))
    yield "maxplus_extend", (rng.normal(size=n // 4), 1.5, d)
    sp = grid2d(65 if quick else 129)
    indptr, indices, lengths = sp.csr
    yield "edge_slopes", (rng.normal(size=sp.n), indptr, indices, lengths)
    m = 2_000 if quick else 20_000
    xs = rng.random((m, 2))
    ang = rng.random(m) * 2 * np.pi
    vs = np.column_stack([np.cos(ang), np.sin(ang)])
    yield "trace_crossings", (xs, vs, regular_polygon((0.5, 0.5), 0.25, 256), True)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--quick", action="store_true")
    args = p.parse_args(argv)
    print(f"{'kernel':<16}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, inputs in cases(args.quick):
        f_nb = getattr(kernels, name + "_numba")
        f_np = getattr(kernels, name + "_numpy")
        t_nb = _best(lambda: f_nb(*inputs), args.repeat)
        t_np = _best(lambda: f_np(*inputs), args.repeat)
        diff = _diff(f_nb(*inputs), f_np(*inputs))
        print(f"{name:<16}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
