"""Hot solver kernels with a numba fast path and a pure-numpy fallback.

The implicit diagonal solvers dominate the runtime of the permutation-invariant
geometries, so they are compiled with numba when available.  Setting the
environment variable ``CORRGEO_NUMBA=0`` selects the vectorized numpy
implementations instead; ``benchmarks/compare_backends.py`` times both.

All kernels are batched over the leading axis and share exact semantics
between the two backends (same iteration counts, same damping schedule).
"""

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("CORRGEO_NUMBA", "1") != "0"

# damping schedule shared by both backends: alpha in {1, 1/2, ..., 2**-20}
_MAX_HALVINGS = 20


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def _sym_exp_batch(s):
    w, v = np.linalg.eigh(s)
    return (v * np.exp(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def dplus_solve_np(h, tol, max_iter):
    """Find diagonal vectors d with unit-diagonal exp(diag(d) + h), batched.

    Fixed-point iteration d <- d - log(diag(exp(diag(d) + h))) from d = 0.
    Returns (d, iterations, residuals); a residual above tol means the
    iteration budget ran out for that sample.
    """
    h = np.asarray(h, dtype=np.float64)
    b, n = h.shape[0], h.shape[1]
    d = np.zeros((b, n))
    iters = np.zeros(b, dtype=np.int64)
    res = np.full(b, np.inf)
    active = np.ones(b, dtype=bool)
    eye = np.arange(n)
    for _ in range(max_iter):
        if not active.any():
            break
        s = h[active].copy()
        s[:, eye, eye] += d[active]
        diag = _sym_exp_batch(s)[:, eye, eye]
        r = np.abs(diag - 1.0).max(axis=1)
        iters[active] += 1
        res[active] = r
        done = r <= tol
        upd = np.where(active)[0]
        d[upd[~done]] -= np.log(diag[~done])
        active[upd[done]] = False
    return d, iters, res


def _f_residual(c, x):
    return c @ x - 1.0 / x


def dstar_full_np(c, tol, max_iter):
    """Damped-Newton solve of c @ x = 1/x for positive x, batched.

    Returns (x, iterations, residuals, damping_failed).  The residual is the
    max-norm of c @ x - 1/x; iteration stops once it falls below tol, after
    which one guarded undamped Newton step polishes x to the rounding floor.
    """
    c = np.asarray(c, dtype=np.float64)
    b, n = c.shape[0], c.shape[1]
    x = np.ones((b, n))
    iters = np.zeros(b, dtype=np.int64)
    res = np.full(b, np.inf)
    failed = np.zeros(b, dtype=bool)
    for k in range(b):
        xk = x[k]
        for _ in range(max_iter):
            f = _f_residual(c[k], xk)
            res[k] = np.abs(f).max()
            # scale-aware stop: the attainable floor grows with |x|
            if res[k] <= tol * max(1.0, np.abs(xk).max()):
                xk, res[k] = _polish_np(c[k], xk, f, res[k])
                break
            jac = c[k] + np.diag(1.0 / xk**2)
            step = np.linalg.solve(jac, -f)
            xk, ok = _damped_update_np(c[k], xk, f, step)
            if not ok:
                # stalled at the rounding floor; fail only above threshold
                failed[k] = res[k] > tol * max(1.0, np.abs(xk).max())
                break
            iters[k] += 1
        x[k] = xk
    return x, iters, res, failed


def _polish_np(c, x, f, fnorm):
    if fnorm == 0.0:
        return x, fnorm
    jac = c + np.diag(1.0 / x**2)
    trial = x + np.linalg.solve(jac, -f)
    if np.all(trial > 0.0):
        tnorm = np.abs(_f_residual(c, trial)).max()
        if tnorm <= fnorm:
            return trial, tnorm
    return x, fnorm


def _damped_update_np(c, x, f, step):
    fnorm = np.abs(f).max()
    alpha = 1.0
    for _ in range(_MAX_HALVINGS + 1):
        trial = x + alpha * step
        if np.all(trial > 0.0):
            if np.abs(_f_residual(c, trial)).max() < fnorm:
                return trial, True
        alpha *= 0.5
    return x, False


def dstar_newton1_np(c):
    """A single damped Newton step from x = 1, batched.

    Returns (x, damping_failed); positivity of x is guaranteed whenever the
    step succeeds.
    """
    c = np.asarray(c, dtype=np.float64)
    b, n = c.shape[0], c.shape[1]
    x = np.ones((b, n))
    failed = np.zeros(b, dtype=bool)
    for k in range(b):
        f = c[k] @ x[k] - 1.0
        if np.abs(f).max() == 0.0:
            continue
        jac = c[k] + np.eye(n)
        step = np.linalg.solve(jac, -f)
        x[k], ok = _damped_update_np(c[k], x[k], f, step)
        failed[k] = not ok
    return x, failed


def h0_build_np(u, lw):
    """Eigenbasis coupling matrix H0[i,l] = sum_jk U_ij U_ik U_lj U_lk LW_jk, batched."""
    p = u[..., :, None, :] * u[..., None, :, :]
    return np.einsum("...ilj,...jk,...ilk->...il", p, lw, p)


# ---------------------------------------------------------------------------
# numba implementations (same semantics, per-sample loops)
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    _njit = numba.njit(cache=True, fastmath=False)

    @_njit
    def _sym_exp_nb(s):
        w, v = np.linalg.eigh(s)
        return (v * np.exp(w)) @ v.T

    @_njit
    def dplus_solve_nb(h, tol, max_iter):
        b, n = h.shape[0], h.shape[1]
        d = np.zeros((b, n))
        iters = np.zeros(b, dtype=np.int64)
        res = np.full(b, np.inf)
        for k in range(b):
            for _ in range(max_iter):
                s = h[k].copy()
                for i in range(n):
                    s[i, i] += d[k, i]
                e = _sym_exp_nb(s)
                r = 0.0
                for i in range(n):
                    r = max(r, abs(e[i, i] - 1.0))
                iters[k] += 1
                res[k] = r
                if r <= tol:
                    break
                for i in range(n):
                    d[k, i] -= np.log(e[i, i])
        return d, iters, res

    @_njit
    def _residual_nb(c, x):
        f = c @ x
        for i in range(x.shape[0]):
            f[i] -= 1.0 / x[i]
        return f

    @_njit
    def _damped_update_nb(c, x, fnorm, step):
        alpha = 1.0
        for _ in range(_MAX_HALVINGS + 1):
            trial = x + alpha * step
            positive = True
            for i in range(trial.shape[0]):
                if trial[i] <= 0.0:
                    positive = False
                    break
            if positive:
                if np.abs(_residual_nb(c, trial)).max() < fnorm:
                    return trial, True
            alpha *= 0.5
        return x, False

    @_njit
    def _polish_nb(c, x, f, fnorm):
        n = x.shape[0]
        jac = c.copy()
        for i in range(n):
            jac[i, i] += 1.0 / x[i] ** 2
        trial = x + np.linalg.solve(jac, -f)
        positive = True
        for i in range(n):
            if trial[i] <= 0.0:
                positive = False
                break
        if positive:
            tnorm = np.abs(_residual_nb(c, trial)).max()
            if tnorm <= fnorm:
                return trial, tnorm
        return x, fnorm

    @_njit
    def dstar_full_nb(c, tol, max_iter):
        b, n = c.shape[0], c.shape[1]
        x = np.ones((b, n))
        iters = np.zeros(b, dtype=np.int64)
        res = np.full(b, np.inf)
        failed = np.zeros(b, dtype=np.bool_)
        for k in range(b):
            xk = x[k].copy()
            for _ in range(max_iter):
                f = _residual_nb(c[k], xk)
                res[k] = np.abs(f).max()
                # scale-aware stop: the attainable floor grows with |x|
                if res[k] <= tol * max(1.0, np.abs(xk).max()):
                    if res[k] > 0.0:
                        xk, res[k] = _polish_nb(c[k], xk, f, res[k])
                    break
                jac = c[k].copy()
                for i in range(n):
                    jac[i, i] += 1.0 / xk[i] ** 2
                step = np.linalg.solve(jac, -f)
                xk, ok = _damped_update_nb(c[k], xk, res[k], step)
                if not ok:
                    # stalled at the rounding floor; fail only above threshold
                    failed[k] = res[k] > tol * max(1.0, np.abs(xk).max())
                    break
                iters[k] += 1
            x[k] = xk
        return x, iters, res, failed

    @_njit
    def dstar_newton1_nb(c):
        b, n = c.shape[0], c.shape[1]
        x = np.ones((b, n))
        failed = np.zeros(b, dtype=np.bool_)
        for k in range(b):
            f = _residual_nb(c[k], x[k])
            fnorm = np.abs(f).max()
            if fnorm == 0.0:
                continue
            jac = c[k].copy()
            for i in range(n):
                jac[i, i] += 1.0
            step = np.linalg.solve(jac, -f)
            x[k], ok = _damped_update_nb(c[k], x[k], fnorm, step)
            failed[k] = not ok
        return x, failed

    @_njit
    def h0_build_nb(u, lw):
        b, n = u.shape[0], u.shape[1]
        out = np.empty((b, n, n))
        for s in range(b):
            for i in range(n):
                for l in range(i, n):
                    acc = 0.0
                    for j in range(n):
                        pj = u[s, i, j] * u[s, l, j]
                        row = 0.0
                        for k in range(n):
                            row += lw[s, j, k] * (u[s, i, k] * u[s, l, k])
                        acc += pj * row
                    out[s, i, l] = acc
                    out[s, l, i] = acc
        return out

    def _as_batch3(a):
        return np.ascontiguousarray(a, dtype=np.float64)

    def dplus_solve_numba(h, tol, max_iter):
        return dplus_solve_nb(_as_batch3(h), float(tol), int(max_iter))

    def dstar_full_numba(c, tol, max_iter):
        x, iters, res, failed = dstar_full_nb(_as_batch3(c), float(tol), int(max_iter))
        return x, iters, res, np.asarray(failed, dtype=bool)

    def dstar_newton1_numba(c):
        x, failed = dstar_newton1_nb(_as_batch3(c))
        return x, np.asarray(failed, dtype=bool)

    def h0_build_numba(u, lw):
        u = np.asarray(u, dtype=np.float64)
        lw = np.asarray(lw, dtype=np.float64)
        shape = u.shape
        n = shape[-1]
        ub = np.ascontiguousarray(u.reshape(-1, n, n))
        lb = np.ascontiguousarray(lw.reshape(-1, n, n))
        return h0_build_nb(ub, lb).reshape(shape)

    def warmup():
        """Trigger jit compilation on tiny inputs (cached across processes)."""
        h = np.zeros((1, 2, 2))
        h[0, 0, 1] = h[0, 1, 0] = 0.1
        dplus_solve_numba(h, 1e-12, 50)
        c = np.eye(2)[None] + 0.0
        c[0, 0, 1] = c[0, 1, 0] = 0.3
        dstar_full_numba(c, 1e-10, 20)
        dstar_newton1_numba(c)
        h0_build_numba(np.eye(2)[None], np.ones((1, 2, 2)))


if USE_NUMBA:
    dplus_solve = dplus_solve_numba
    dstar_full = dstar_full_numba
    dstar_newton1 = dstar_newton1_numba
    h0_build = h0_build_numba
else:
    dplus_solve = dplus_solve_np
    dstar_full = dstar_full_np
    dstar_newton1 = dstar_newton1_np
    h0_build = h0_build_np

    def warmup():
        return None
