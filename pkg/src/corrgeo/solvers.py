"""Implicit diagonal solvers for the permutation-invariant geometries.

Two solvers, each with an exact reverse-mode rule:

* ``dplus``: the diagonal d making exp(diag(d) + H) unit-diagonal, by the
  exponentially converging fixed point d <- d - log(diag(exp(diag(d) + H))).
* ``dstar``: the positive vector x with (diag(x) C diag(x)) 1 = 1, i.e. the
  zero of f(x) = C x - 1/x, by damped Newton from x = 1 (``full``) or a single
  damped Newton step (``newton1``).

``full`` mode pairs with the exact analytic gradients below; ``newton1``
pairs with differentiating through the single step (see
``dstar_newton1_backward``).
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from . import linalg as la
from .errors import DampingFailure, NoConvergence, SingularH0

DPLUS_TOL = 1e-12
DPLUS_MAX_ITER = 100
DSTAR_TOL = 1e-10
DSTAR_MAX_ITER = 50
H0_COND_LIMIT = 1e12


@dataclass
class DplusResult:
    d: np.ndarray          # diagonal entries, so D = diag(d)
    iterations: int
    residual: float        # max |diag(exp(D + H)) - 1|


@dataclass
class DstarResult:
    x: np.ndarray          # positive vector, so D* = diag(x)
    iterations: int
    residual: float        # max |C x - 1/x|; the stop test scales tol by max(1, |x|)


# ---------------------------------------------------------------------------
# forward solves
# ---------------------------------------------------------------------------

def _as_batch(h):
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 2:
        return h[None], True
    return h.reshape((-1,) + h.shape[-2:]), False


def dplus_batch(h, tol=DPLUS_TOL, max_iter=DPLUS_MAX_ITER):
    """Batched diagonal solve; raises NoConvergence if any sample fails."""
    hb, _ = _as_batch(h)
    d, iters, res = kernels.dplus_solve(hb, tol, max_iter)
    if (res > tol).any():
        worst = int(np.argmax(res))
        raise NoConvergence(int(iters[worst]), float(res[worst]), "dplus")
    shape = np.asarray(h).shape[:-2] + (hb.shape[-1],)
    return d.reshape(shape), iters, res


def dplus(h, tol=DPLUS_TOL, max_iter=DPLUS_MAX_ITER):
    """Solve for the unit-diagonal shift of a single hollow symmetric matrix."""
    d, iters, res = dplus_batch(np.asarray(h, dtype=np.float64)[None], tol, max_iter)
    return DplusResult(d=d[0], iterations=int(iters[0]), residual=float(res[0]))


def dplus_history(h, tol=DPLUS_TOL, max_iter=DPLUS_MAX_ITER):
    """Reference fixed-point loop recording the residual sequence."""
    h = np.asarray(h, dtype=np.float64)
    d = np.zeros(h.shape[-1])
    history = []
    for _ in range(max_iter):
        e = la.sym_exp(h + np.diag(d))
        diag = la.diagvec(e)
        history.append(float(np.abs(diag - 1.0).max()))
        if history[-1] <= tol:
            break
        d -= np.log(diag)
    return d, history


def off_exp_batch(h, tol=DPLUS_TOL, max_iter=DPLUS_MAX_ITER):
    """exp(diag(d) + h) for the solved shift d: hollow symmetric -> correlation."""
    d, _, _ = dplus_batch(h, tol, max_iter)
    return la.sym_exp(np.asarray(h, dtype=np.float64) + la.diag_from_vec(d))


def dstar_batch(c, mode="full", tol=DSTAR_TOL, max_iter=DSTAR_MAX_ITER):
    """Batched positive-diagonal solve. Returns (x, iterations, residuals)."""
    cb, _ = _as_batch(c)
    if mode == "full":
        x, iters, res, failed = kernels.dstar_full(cb, tol, max_iter)
        if failed.any():
            raise DampingFailure("no damped step length reduced the residual")
        scale = np.maximum(1.0, np.abs(x).max(axis=-1))
        if (res > tol * scale).any():
            worst = int(np.argmax(res / scale))
            raise NoConvergence(int(iters[worst]), float(res[worst]), "dstar")
    elif mode == "newton1":
        x, failed = kernels.dstar_newton1(cb)
        if failed.any():
            raise DampingFailure("no damped step length reduced the residual")
        iters = np.ones(len(x), dtype=np.int64)
        res = np.abs(np.einsum("bij,bj->bi", cb, x) - 1.0 / x).max(axis=1)
    else:
        raise ValueError(f"unknown dstar mode {mode!r}")
    shape = np.asarray(c).shape[:-2] + (cb.shape[-1],)
    return x.reshape(shape), iters, res


def dstar(c, mode="full", tol=DSTAR_TOL, max_iter=DSTAR_MAX_ITER):
    """Solve for the row-sum-normalizing diagonal of a single correlation matrix."""
    x, iters, res = dstar_batch(np.asarray(c, dtype=np.float64)[None], mode, tol, max_iter)
    return DstarResult(x=x[0], iterations=int(iters[0]), residual=float(res[0]))


def scaled_spd_batch(c, mode="full", tol=DSTAR_TOL, max_iter=DSTAR_MAX_ITER):
    """diag(x) C diag(x) with the solved x; unit row sums in full mode."""
    x, _, _ = dstar_batch(c, mode, tol, max_iter)
    return np.asarray(c, dtype=np.float64) * x[..., :, None] * x[..., None, :], x


# ---------------------------------------------------------------------------
# exact reverse-mode rules
# ---------------------------------------------------------------------------

def _exp_eig_cache(s):
    lam, u = np.linalg.eigh(np.asarray(s, dtype=np.float64))
    lw = la.loewner(lam, np.exp, np.exp)
    return u, lam, lw


def dplus_backward_batch(h, grad_y, d=None, tol=DPLUS_TOL, max_iter=DPLUS_MAX_ITER):
    """Adjoint of h -> diag(dplus(h)) + h given the adjoint of that sum.

    Returns a hollow symmetric adjoint (pairs with symmetric hollow dh).
    """
    h = np.asarray(h, dtype=np.float64)
    if d is None:
        d, _, _ = dplus_batch(h, tol, max_iter)
    s = h + la.diag_from_vec(d)
    u, _, lw = _exp_eig_cache(s)
    h0 = kernels.h0_build(u, lw)
    if np.linalg.cond(h0).max() > H0_COND_LIMIT:
        raise SingularH0("eigenbasis coupling matrix condition exceeds 1e12")
    g = la.diagvec(grad_y)
    w = np.linalg.solve(h0, g[..., None])[..., 0]
    corr = u @ (lw * (la.transpose(u) @ la.diag_from_vec(w) @ u)) @ la.transpose(u)
    return la.offmat(np.asarray(grad_y) - corr)


def dplus_backward(h, grad_y, d=None, tol=DPLUS_TOL, max_iter=DPLUS_MAX_ITER):
    h = np.asarray(h, dtype=np.float64)
    db = None if d is None else np.asarray(d)[None]
    return dplus_backward_batch(h[None], np.asarray(grad_y)[None], db, tol, max_iter)[0]


def dstar_backward_batch(c, grad_sigma, x=None, tol=DSTAR_TOL, max_iter=DSTAR_MAX_ITER):
    """Adjoint of c -> diag(x) c diag(x) at the full-mode fixed point.

    Returns the symmetric adjoint of c.
    """
    c = np.asarray(c, dtype=np.float64)
    if x is None:
        x, _, _ = dstar_batch(c, "full", tol, max_iter)
    sigma = c * x[..., :, None] * x[..., None, :]
    g = np.asarray(grad_sigma, dtype=np.float64)
    vtil = la.diagvec(sigma @ g + g @ sigma)
    n = c.shape[-1]
    eye = np.broadcast_to(np.eye(n), sigma.shape)
    mv = np.linalg.solve(eye + sigma, vtil[..., None])[..., 0]
    rank1 = mv[..., :, None] * np.ones(n)  # mv 1^T
    inner = g - la.sym(rank1)
    return x[..., :, None] * inner * x[..., None, :]


def dstar_backward(c, grad_sigma, x=None, tol=DSTAR_TOL, max_iter=DSTAR_MAX_ITER):
    c = np.asarray(c, dtype=np.float64)
    xb = None if x is None else np.asarray(x)[None]
    return dstar_backward_batch(c[None], np.asarray(grad_sigma)[None], xb, tol, max_iter)[0]


def dstar_newton1_backward_batch(c, grad_sigma, x):
    """Adjoint of c -> diag(x) c diag(x) through one damped Newton step.

    Differentiates the step itself (solve included), with the damping factor
    treated as the constant chosen in the forward pass.
    """
    c = np.asarray(c, dtype=np.float64)
    g = np.asarray(grad_sigma, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n = c.shape[-1]
    ones = np.ones(c.shape[:-2] + (n,))
    r = np.einsum("...ij,...j->...i", c, ones) - 1.0
    eye = np.broadcast_to(np.eye(n), c.shape)
    a = c + eye
    u = np.linalg.solve(a, r[..., None])[..., 0]
    step = -u
    # recover the damping factor used in the forward pass (alpha in (0, 1])
    denom = np.where(np.abs(step) > 0, step, 1.0)
    alpha = np.where(
        np.abs(step).max(axis=-1, keepdims=True) > 0,
        ((x - 1.0) / denom).max(axis=-1, keepdims=True),
        1.0,
    )
    cbar = x[..., :, None] * g * x[..., None, :]
    xbar = 2.0 * np.einsum("...ij,...j->...i", g * c, x)
    stepbar = alpha * xbar
    ubar = -stepbar
    rbar = np.linalg.solve(a, ubar[..., None])[..., 0]
    cbar = cbar - rbar[..., :, None] * u[..., None, :]
    cbar = cbar + rbar[..., :, None] * np.ones_like(rbar)[..., None, :]
    return la.sym(cbar)
