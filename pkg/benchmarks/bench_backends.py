"""Compare the numba and numpy implementations of the pairwise kernels.

    python3 benchmarks/bench_backends.py [--sizes 500 1000 2000] [--dim 50] [--repeats 5]

Times each hot kernel on both backends, then a full fit with each backend
swapped in, and prints best-of-repeats wall-clock seconds. The numba
kernels are compiled (and cached) by a warm-up call before timing.
"""

import argparse
import time

import numpy as np

from idsp import _backend
from idsp.data import SynthTaskSpec, generate_synth
from idsp.kernels import KernelSpec
from idsp.solver import SolverConfig, fit


def best_of(fn, repeats):
    fn()
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_ops(ops, X, p, repeats):
    S = X @ X.T
    Q = X[:100]
    return {
        "sq_dists": best_of(lambda: ops.sq_dists(X), repeats),
        "sq_dists_cross": best_of(lambda: ops.sq_dists_cross(X, Q), repeats),
        "gram": best_of(lambda: ops.gram(X), repeats),
        "topk_neighbors": best_of(lambda: ops.topk_neighbors(S, p), repeats),
    }


def bench_fit(ops, ds, kernel, repeats):
    saved = _backend.ops
    _backend.ops = ops
    try:
        cfg = SolverConfig.defaults(pda=False, kernel=kernel)
        return best_of(lambda: fit(ds.X, ds.is_target, ds.source_labels, ds.class_count, cfg), repeats)
    finally:
        _backend.ops = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[500, 1000, 2000])
    ap.add_argument("--dim", type=int, default=50)
    ap.add_argument("--p", type=int, default=10)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    if _backend.NUMBA_OPS is None:
        raise SystemExit("numba is not installed; nothing to compare")
    backends = [_backend.NUMPY_OPS, _backend.NUMBA_OPS]
    print(f"{'n+m':>6} {'operation':<16} {'numpy s':>10} {'numba s':>10} {'speedup':>8}")
    for N in args.sizes:
        X = np.random.default_rng(N).standard_normal((N, args.dim))
        times = [bench_ops(ops, X, args.p, args.repeats) for ops in backends]
        # per-class count chosen so that 5 classes x 2 domains give N samples
        ds = generate_synth(SynthTaskSpec(class_count=5, private_source_classes=0,
                                          samples_per_class=max(1, N // 10), dim=args.dim))
        for label, kernel in (("fit linear", KernelSpec("linear")), ("fit rbf", KernelSpec.parse("rbf"))):
            for t, ops in zip(times, backends):
                t[label] = bench_fit(ops, ds, kernel, args.repeats)
        for name in times[0]:
            a, b = times[0][name], times[1][name]
            print(f"{N:>6} {name:<16} {a:>10.4f} {b:>10.4f} {a / b:>7.1f}x")


if __name__ == "__main__":
    main()
