"""Time the compiled kernels against the NumPy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from gradflow import _pykernels, worstcase

try:
    from gradflow import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases():
    rng = np.random.default_rng(0)
    dims = np.array([4, 3, 3, 2], dtype=np.int64)
    size = int(sum(dims[j] * dims[j - 1] for j in range(1, len(dims))))
    theta = 0.5 * rng.standard_normal(size)
    lam = np.ascontiguousarray(rng.standard_normal((2, 4)))
    start, p, _ = worstcase.preset(1.0, 3.0, 1e-6)
    target = np.array([1.0, -0.5, 0.0])
    return {
        "linear_loss_grad": lambda k: k.linear_loss_grad(theta, dims, lam),
        "linear_gd (2000 steps)": lambda k: k.linear_gd(theta, dims, lam, 0.01, 2000, 100),
        "worst_gd_scan (6000 steps)": lambda k: k.worst_gd_scan(
            start[:3].copy(), p.a, p.zc, p.zbc, p.rho, 5e-3, 6000, target, 20.0, 25.0),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not available; only the fallback can be timed")
    print(f"{'kernel':30s} {'python [s]':>12s} {'compiled [s]':>13s} {'speedup':>8s}")
    for name, fn in cases().items():
        number = 200 if name == "linear_loss_grad" else 1
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=number, repeat=args.repeat)) / number
        if _kernels is None:
            print(f"{name:30s} {t_py:12.3e}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_kernels), number=number, repeat=args.repeat)) / number
        print(f"{name:30s} {t_py:12.3e} {t_c:13.3e} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
