"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each backend is loaded directly, so one process times both. Results are
checked for agreement before timing.
"""

import argparse
import timeit

import numpy as np

from sbm import _kernels_py

try:
    from sbm import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    knots = np.sort(rng.normal(size=400))
    jumps = rng.dirichlet(np.ones(400)) * 5
    pts = rng.normal(size=20000)
    targets = np.sort(rng.uniform(0.05, 4.95, 2000))
    y = np.sort(rng.normal(size=200))
    rows = rng.dirichlet(np.full(200, 0.3), size=500)
    xa, xb = np.sort(rng.normal(size=5000)), np.sort(rng.normal(size=5000))
    wa, wb = rng.dirichlet(np.ones(5000)), rng.dirichlet(np.ones(5000))
    return {
        "smooth_step": lambda k: k.smooth_step(pts, knots, jumps, 0.7, -2.0),
        "smooth_step_deriv": lambda k: k.smooth_step_deriv(pts, knots, jumps, 0.7),
        "smooth_step_inverse": lambda k: k.smooth_step_inverse(targets, knots, jumps, 0.7, 0.0),
        "maxcorr_rows": lambda k: k.maxcorr_rows(rows, y)[0],
        "wasserstein_1d": lambda k: k.wasserstein_1d(xa, wa, xb, wb, 2.0),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'python [ms]':>14}{'compiled [ms]':>16}{'speed-up':>10}")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{name:<22}{t_py:>14.2f}{'n/a':>16}{'':>10}")
            continue
        np.testing.assert_allclose(fn(_kernels), fn(_kernels_py), rtol=1e-9, atol=1e-12)
        t_c = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<22}{t_py:>14.2f}{t_c:>16.2f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
