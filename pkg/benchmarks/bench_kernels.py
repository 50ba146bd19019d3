"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both paths are called explicitly through ``use_numba``, so the environment
flag DAVIES_LAB_NUMBA does not matter here.  The first numba call (compilation
or cache load) is excluded from the timings.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from davies_lab import _kernels


def bfs_case(D: int, side: int):
    grid = np.zeros((side,) * D, dtype=bool)
    grid[(side // 2,) * D] = True
    grid[(0,) * D] = True
    return lambda use: _kernels.grid_distance(grid, "chebyshev", use_numba=use)


def ising_case(n: int):
    edges = np.array([(i, i + 1) for i in range(n - 1)])
    rng = np.random.default_rng(0)
    couplings, fields = rng.normal(size=n - 1), rng.normal(size=n)
    return lambda use: _kernels.ising_energies(n, edges, couplings, fields, use_numba=use)


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    cases = {f"grid_distance D={D} side={s}": bfs_case(D, s)
             for D, s in [(1, 4001), (2, 201), (3, 45)]}
    cases.update({f"ising_energies n={n}": ising_case(n) for n in (10, 16, 20)})
    print(f"{'kernel':32s} {'numpy [ms]':>12s} {'numba [ms]':>12s} {'speedup':>9s}  agree")
    for name, fn in cases.items():
        if not _kernels.HAVE_NUMBA:
            print(f"{name:32s} numba unavailable")
            continue
        a, b = fn(True), fn(False)
        agree = bool(np.allclose(a, b, rtol=0, atol=1e-12 * max(1.0, float(np.max(np.abs(b))))))
        t_np = min(timeit.repeat(lambda: fn(False), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fn(True), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {t_np:12.3f} {t_nb:12.3f} {t_np / t_nb:9.1f}  {agree}")


if __name__ == "__main__":
    main()
