"""Timing comparison of the numba and pure-numpy kernel variants.

Run with ``python3 benchmarks/bench_kernels.py``.  The numba variants are
warmed up once before timing so JIT compilation is excluded.
"""

import time

import numpy as np

from efmqc import kernels
from efmqc.backend import USE_NUMBA


def _timeit(fn, *args, repeat=5):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_rk4(n_traj=2000, n_states=5, nsub=20):
    rng = np.random.default_rng(0)
    c = rng.standard_normal((n_traj, n_states)) + \
        1j * rng.standard_normal((n_traj, n_states))
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    e0 = rng.standard_normal((n_traj, n_states))
    e1 = e0 + 0.01

    def skew():
        m = rng.standard_normal((n_traj, n_states, n_states))
        return m - np.swapaxes(m, 1, 2)

    args = (c, e0, e1, skew(), skew(), skew(), skew(), 0.1, nsub)
    rows = [("rk4_electronic numpy", _timeit(kernels.rk4_electronic_np, *args))]
    if USE_NUMBA:
        kernels.rk4_electronic(*args)          # JIT warm-up
        rows.append(("rk4_electronic numba", _timeit(kernels.rk4_electronic, *args)))
    return rows


def bench_qmom(n_traj=2000, ndof=1):
    rng = np.random.default_rng(1)
    pos = rng.standard_normal((n_traj, ndof))
    sigma = np.full(ndof, 0.5)
    rows = [("qmom0_centers numpy", _timeit(kernels.qmom0_centers_np, pos, sigma))]
    if USE_NUMBA:
        kernels.qmom0_centers(pos, sigma)      # JIT warm-up
        rows.append(("qmom0_centers numba", _timeit(kernels.qmom0_centers, pos, sigma)))
    return rows


def main():
    print(f"backend available: {'numba' if USE_NUMBA else 'numpy only'}")
    for rows in (bench_rk4(), bench_qmom()):
        base = rows[0][1]
        for name, t in rows:
            speedup = f"  ({base / t:4.1f}x vs numpy)" if t != base else ""
            print(f"{name:28s} {t * 1e3:9.3f} ms{speedup}")


if __name__ == "__main__":
    main()
