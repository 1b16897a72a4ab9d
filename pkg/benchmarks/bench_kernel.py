"""Time the compiled likelihood kernel against the pure-NumPy fallback.

Usage::

    python3 benchmarks/bench_kernel.py [--sizes 144 1000 10000] [--repeats 200]

Each problem is a synthetic aggregated-question table (the shape the
optimizer evaluates thousands of times per fit). Reported figures are
the best-of-5 mean call time over ``--repeats`` calls.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from aicscale import _kernel_py

try:
    from aicscale import _kernel
except ImportError:
    _kernel = None


def make_problem(rng, n, n_codecs=4):
    params = np.abs(rng.normal(1.5, 0.5, size=(n_codecs, 4))) + 0.05
    codec_left = rng.integers(-1, n_codecs, size=n).astype(np.int32)
    codec_right = rng.integers(0, n_codecs, size=n).astype(np.int32)
    args = dict(
        codec_left=codec_left,
        r_left=rng.uniform(0.05, 2.0, size=n),
        codec_right=codec_right,
        r_right=rng.uniform(0.05, 2.0, size=n),
        boosted=rng.integers(0, 2, size=n).astype(np.uint8),
        n_left=rng.integers(0, 30, size=n).astype(float),
        n_right=rng.integers(0, 30, size=n).astype(float),
    )
    return params, args


def best_mean_call(fn, repeats, trials=5):
    best = np.inf
    for _ in range(trials):
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeats)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+",
                        default=[144, 1000, 10000])
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--grad", action="store_true", default=True,
                        help="time the gradient path (default)")
    parser.add_argument("--nll-only", dest="grad", action="store_false")
    args_ns = parser.parse_args()

    if _kernel is None:
        print("compiled kernel not built; showing the fallback only")

    rng = np.random.default_rng(0)
    mode = "nll+grad" if args_ns.grad else "nll"
    print(f"{'rows':>7}  {'python':>12}  {'compiled':>12}  {'speedup':>8}   ({mode})")
    for n in args_ns.sizes:
        params, kargs = make_problem(rng, n)
        t_py = best_mean_call(
            lambda: _kernel_py.nll_and_grad(params, k=1.0,
                                            want_grad=args_ns.grad, **kargs),
            args_ns.repeats)
        line = f"{n:>7}  {t_py * 1e6:>10.1f}us"
        if _kernel is not None:
            nll_c, _ = _kernel.nll_and_grad(params, k=1.0, want_grad=False,
                                            **kargs)
            nll_p, _ = _kernel_py.nll_and_grad(params, k=1.0, want_grad=False,
                                               **kargs)
            if abs(nll_c - nll_p) > 1e-9 * max(abs(nll_p), 1.0):
                raise SystemExit(
                    f"backend disagreement at n={n}: {nll_c} vs {nll_p}")
            t_c = best_mean_call(
                lambda: _kernel.nll_and_grad(params, k=1.0,
                                             want_grad=args_ns.grad, **kargs),
                args_ns.repeats)
            line += f"  {t_c * 1e6:>10.1f}us  {t_py / t_c:>7.1f}x"
        print(line)


if __name__ == "__main__":
    main()
