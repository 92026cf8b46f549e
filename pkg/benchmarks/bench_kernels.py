"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--n 37] [--T 210] [--q 4] [--repeat 20]

Both backends are imported directly, so the result does not depend on
``MRTWCLS_PURE_PYTHON``.  Outputs are checked for agreement before timing.
"""

import argparse
import timeit

import numpy as np

from mrtwcls import _pykernels

try:
    from mrtwcls import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def make_inputs(n, T, q, seed=0):
    rng = np.random.default_rng(seed)
    N = n * T
    X = rng.normal(size=(N, q))
    weight = rng.random(N) * (rng.random(N) < 0.8)
    resid = rng.normal(size=N)
    starts = np.arange(0, N, T)
    drift = rng.normal(size=(n, T))
    shocks = rng.normal(size=(n, T))
    y0 = rng.normal(size=n)
    return {
        "cluster_scores": (X, weight, resid, starts),
        "cluster_grams": (X, weight, starts),
        "ar1_recursion": (drift, 0.0655, y0, shocks),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--n", type=int, default=37)
    ap.add_argument("--T", type=int, default=210)
    ap.add_argument("--q", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels are not built; nothing to compare")
        return 1
    inputs = make_inputs(args.n, args.T, args.q)
    print(f"n={args.n} T={args.T} q={args.q}, best of {args.repeat}")
    print(f"{'kernel':<16}{'numpy (ms)':>12}{'compiled (ms)':>15}{'speedup':>10}")
    for name, call_args in inputs.items():
        py, c = getattr(_pykernels, name), getattr(_ckernels, name)
        np.testing.assert_allclose(c(*call_args), py(*call_args), rtol=1e-12, atol=1e-12)
        t_py = min(timeit.repeat(lambda: py(*call_args), number=1, repeat=args.repeat))
        t_c = min(timeit.repeat(lambda: c(*call_args), number=1, repeat=args.repeat))
        print(f"{name:<16}{t_py * 1e3:>12.3f}{t_c * 1e3:>15.3f}{t_py / t_c:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
