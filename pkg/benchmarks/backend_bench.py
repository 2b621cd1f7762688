#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

The package selects one backend at import time via LPANN_NUMBA; this script
imports both implementations directly and times them side by side on the
workloads that dominate index builds and queries: point-to-set lp distances
(cover carving, exact-NN oracles, candidate re-checks), exhaustive pairwise
diameters (cover verification), and the signed-power map (cluster image
construction).

Usage:
    python3 benchmarks/backend_bench.py [--n 4000] [--d 32] [--repeats 7]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from lpann import _kernels


def best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=4000)
    parser.add_argument("--d", type=int, default=32)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    if not _kernels.NUMBA_ENABLED:
        print("numba backend unavailable (LPANN_NUMBA=0 or numba missing); nothing to compare")
        return 1

    rng = np.random.default_rng(0)
    mat = rng.standard_normal((args.n, args.d))
    small = mat[:600]
    v = rng.standard_normal(args.d)

    cases = []
    for p in (2.0, 4.0, 2.5):
        cases.append((
            f"dists_to_point  n={args.n} p={p}",
            lambda p=p: _kernels.dists_to_point_nb(mat, v, p),
            lambda p=p: _kernels.dists_to_point_np(mat, v, p),
        ))
    cases.append((
        f"pairwise_diameter n=600 p=4.0",
        lambda: _kernels.pairwise_diameter_nb(small, 4.0),
        lambda: _kernels.pairwise_diameter_np(small, 4.0),
    ))
    cases.append((
        f"signed_power    n={args.n} e=2.0",
        lambda: _kernels.signed_power_nb(mat, 2.0, 3.0),
        lambda: _kernels.signed_power_np(mat, 2.0, 3.0),
    ))

    # warm the JIT before timing
    for _, nb, _np in cases:
        nb()

    print(f"{'kernel':36s} {'numba':>12s} {'numpy':>12s} {'speedup':>9s}")
    for name, nb, np_fn in cases:
        t_nb = best_of(nb, args.repeats)
        t_np = best_of(np_fn, args.repeats)
        print(f"{name:36s} {t_nb * 1e3:9.3f} ms {t_np * 1e3:9.3f} ms {t_np / t_nb:8.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
