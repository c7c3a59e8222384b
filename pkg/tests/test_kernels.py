"""The numba fast path and the numpy fallback must agree exactly."""

import numpy as np
import pytest

from corrgeo import kernels
from corrgeo import domain as dom
from corrgeo import linalg as la

from helpers import random_hollow

needs_numba = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba unavailable")


def hollow_batch(b, n, seed, cap=2.0):
    rng = np.random.default_rng(seed)
    out = np.empty((b, n, n))
    for k in range(b):
        h = random_hollow(n, rng)
        m = np.abs(h).max()
        out[k] = h if m <= cap else h * cap / m
    return out


def cor_batch(b, n, seed):
    return np.stack([dom.random_correlation(n, 1.0, rng=seed + k) for k in range(b)])


@needs_numba
class TestBackendsAgree:
    def test_dplus(self):
        h = hollow_batch(8, 6, 0)
        d_np, it_np, r_np = kernels.dplus_solve_np(h, 1e-12, 300)
        d_nb, it_nb, r_nb = kernels.dplus_solve_numba(h, 1e-12, 300)
        assert np.allclose(d_np, d_nb, atol=1e-13)
        assert np.array_equal(it_np, it_nb)

    def test_dstar_full(self):
        c = cor_batch(8, 6, 100)
        x_np, it_np, r_np, f_np = kernels.dstar_full_np(c, 1e-10, 50)
        x_nb, it_nb, r_nb, f_nb = kernels.dstar_full_numba(c, 1e-10, 50)
        assert np.allclose(x_np, x_nb, atol=1e-13)
        assert np.array_equal(it_np, it_nb)
        assert not f_np.any() and not f_nb.any()

    def test_dstar_newton1(self):
        c = cor_batch(8, 6, 200)
        x_np, f_np = kernels.dstar_newton1_np(c)
        x_nb, f_nb = kernels.dstar_newton1_numba(c)
        assert np.allclose(x_np, x_nb, atol=1e-13)
        assert not f_np.any() and not f_nb.any()

    def test_h0_build(self):
        rng = np.random.default_rng(3)
        s = np.stack([la.sym(rng.standard_normal((5, 5))) for _ in range(4)])
        lam, u = np.linalg.eigh(s)
        lw = la.loewner(lam, np.exp, np.exp)
        a = kernels.h0_build_np(u, lw)
        b = kernels.h0_build_numba(u, lw)
        assert np.allclose(a, b, atol=1e-12)

    def test_env_flag_selects_backend(self):
        import subprocess
        import sys

        code = (
            "import os; os.environ['CORRGEO_NUMBA']='0'; "
            "from corrgeo import kernels; "
            "assert kernels.dplus_solve is kernels.dplus_solve_np; "
            "print('fallback-ok')"
        )
        out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True)
        assert out.returncode == 0 and "fallback-ok" in out.stdout
