#!/usr/bin/env python3
"""Time the numba solver kernels against the pure-numpy fallback.

Run from the repository root:

    python3 benchmarks/compare_backends.py

The same comparison applies to a full workload by setting CORRGEO_NUMBA=0
before running the CLI, e.g. `CORRGEO_NUMBA=0 corrgeo bench ...`.
"""

import time

import numpy as np

from corrgeo import domain as dom
from corrgeo import kernels
from corrgeo import linalg as la


def hollow_batch(b, n, rng, cap=2.0):
    out = np.empty((b, n, n))
    for k in range(b):
        s = dom.random_hollow(n, rng)
        m = np.abs(s).max()
        out[k] = s if m <= cap else s * cap / m
    return out


def cor_batch(b, n, rng):
    return np.stack([dom.random_correlation(n, 1.0, rng) for _ in range(b)])


def clock(fn, repeats=7):
    fn()  # warm (jit compile, caches)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    if not kernels.HAVE_NUMBA:
        print("numba not installed; nothing to compare")
        return
    rng = np.random.default_rng(0)
    rows = []
    for n, b in ((6, 64), (16, 64), (32, 32)):
        h = hollow_batch(b, n, rng)
        c = cor_batch(b, n, rng)
        s = la.sym(rng.standard_normal((b, n, n)))
        lam, u = np.linalg.eigh(s)
        lw = la.loewner(lam, np.exp, np.exp)
        cases = [
            (f"dplus        n={n:3d} b={b}",
             lambda: kernels.dplus_solve_np(h, 1e-12, 300),
             lambda: kernels.dplus_solve_numba(h, 1e-12, 300)),
            (f"dstar full   n={n:3d} b={b}",
             lambda: kernels.dstar_full_np(c, 1e-10, 50),
             lambda: kernels.dstar_full_numba(c, 1e-10, 50)),
            (f"dstar newton1 n={n:3d} b={b}",
             lambda: kernels.dstar_newton1_np(c),
             lambda: kernels.dstar_newton1_numba(c)),
            (f"h0 build     n={n:3d} b={b}",
             lambda: kernels.h0_build_np(u, lw),
             lambda: kernels.h0_build_numba(u, lw)),
        ]
        for name, np_fn, nb_fn in cases:
            t_np = clock(np_fn)
            t_nb = clock(nb_fn)
            rows.append((name, t_np, t_nb))
    print(f"{'kernel':<26}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>9}")
    for name, t_np, t_nb in rows:
        print(f"{name:<26}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.2f}")


if __name__ == "__main__":
    main()
