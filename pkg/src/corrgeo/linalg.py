"""Dense symmetric/triangular primitives with forward values and analytic differentials.

Everything accepts stacked inputs (leading batch axes) unless noted.  Gradients
of symmetric-matrix arguments follow the convention that the adjoint G of a
symmetric input S is itself symmetric and pairs as dl = <G, dS> with dS
symmetric, so a finite difference along E_ij + E_ji (i != j) equals 2 G_ij.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadDiagonal,
    NoConvergence,
    NotPositiveDefinite,
    NotSymmetric,
    SingularFactor,
)

EPS_PD = 1e-12
SYM_TOL = 1e-10


# ---------------------------------------------------------------------------
# structural helpers (exact, no floating error)
# ---------------------------------------------------------------------------

def diagvec(m):
    """Vector of diagonal elements."""
    return np.ascontiguousarray(np.diagonal(m, axis1=-2, axis2=-1))


def diag_from_vec(v):
    """Diagonal matrix (stack) from a vector (stack)."""
    v = np.asarray(v)
    n = v.shape[-1]
    out = np.zeros(v.shape[:-1] + (n, n), dtype=v.dtype)
    idx = np.arange(n)
    out[..., idx, idx] = v
    return out


def dmat(m):
    """Diagonal part of a square matrix, as a diagonal matrix."""
    return diag_from_vec(diagvec(m))


def offmat(m):
    """Matrix with its diagonal zeroed."""
    out = np.array(m, dtype=np.float64, copy=True)
    idx = np.arange(out.shape[-1])
    out[..., idx, idx] = 0.0
    return out


def strict_lower(m):
    """Strictly lower triangular part."""
    return np.tril(m, -1)


def half_lower(m):
    """Strictly lower part plus half the diagonal."""
    return np.tril(m, -1) + 0.5 * dmat(m)


def sum_all(m):
    """Sum of all entries."""
    return np.asarray(m).sum(axis=(-2, -1))


def sym(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def transpose(m):
    return np.swapaxes(m, -1, -2)


def check_symmetric(s, tol=SYM_TOL, what="matrix"):
    gap = np.abs(s - transpose(s)).max()
    if gap > tol:
        raise NotSymmetric(f"{what} asymmetric by {gap:.3e} (tol {tol:.0e})")


# ---------------------------------------------------------------------------
# eigendecomposition and matrix functions
# ---------------------------------------------------------------------------

@dataclass
class SymEig:
    """Eigendecomposition S = U diag(lam) U^T with ascending eigenvalues."""

    u: np.ndarray
    lam: np.ndarray


def sym_eig(s):
    """Eigendecomposition of a symmetric matrix (stack), eigenvalues ascending."""
    s = np.asarray(s, dtype=np.float64)
    check_symmetric(s)
    try:
        lam, u = np.linalg.eigh(s)
    except np.linalg.LinAlgError as e:
        raise NoConvergence(-1, np.nan, "eigendecomposition") from e
    return SymEig(u=u, lam=lam)


_FUNS = {
    "exp": (np.exp, np.exp, False),
    "log": (np.log, lambda x: 1.0 / x, True),
}


def _fun_pair(kind, p):
    if kind in _FUNS:
        f, df, needs_pd = _FUNS[kind]
        return f, df, needs_pd
    if kind == "power":
        if p is None:
            raise ValueError("power requires an exponent")
        needs_pd = float(p) != int(p) or p < 0
        return (lambda x: x**p), (lambda x: p * x ** (p - 1.0)), needs_pd
    raise ValueError(f"unknown matrix function {kind!r}")


def _check_pd_eigs(lam, what):
    if lam.min() <= EPS_PD:
        raise NotPositiveDefinite(f"{what}: min eigenvalue {lam.min():.3e} <= {EPS_PD:.0e}")


def loewner(lam, f, df):
    """Matrix of divided differences of f over eigenvalue pairs.

    Near-degenerate pairs (gap below 1e-10 * max(1, |li| + |lj|)) fall back to
    the derivative at the pair midpoint, which keeps the matrix exactly
    symmetric.
    """
    li = lam[..., :, None]
    lj = lam[..., None, :]
    gap = li - lj
    eps = 1e-10 * np.maximum(1.0, np.abs(li) + np.abs(lj))
    near = np.abs(gap) <= eps
    safe = np.where(near, 1.0, gap)
    quot = (f(li) - f(lj)) / safe
    return np.where(near, df(0.5 * (li + lj)), quot)


def sym_fun(kind, s, p=None):
    """Matrix function U f(lam) U^T of a symmetric matrix (stack)."""
    f, _, needs_pd = _fun_pair(kind, p)
    s = np.asarray(s, dtype=np.float64)
    lam, u = np.linalg.eigh(s)
    if needs_pd:
        _check_pd_eigs(lam, f"sym_fun({kind})")
    return (u * f(lam)[..., None, :]) @ transpose(u)


def sym_fun_diff(kind, s, v, p=None):
    """Directional derivative of a symmetric matrix function at s along v.

    Self-adjoint in v, so the same routine backpropagates an output adjoint.
    """
    f, df, needs_pd = _fun_pair(kind, p)
    s = np.asarray(s, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    lam, u = np.linalg.eigh(s)
    if needs_pd:
        _check_pd_eigs(lam, f"sym_fun_diff({kind})")
    lw = loewner(lam, f, df)
    return u @ (lw * (transpose(u) @ v @ u)) @ transpose(u)


def sym_exp(s):
    return sym_fun("exp", s)


def sym_log(s):
    return sym_fun("log", s)


def sym_pow(s, p):
    return sym_fun("power", s, p=p)


# ---------------------------------------------------------------------------
# Cholesky with differential and reverse-mode rule
# ---------------------------------------------------------------------------

def chol(p):
    """Lower Cholesky factor with positive diagonal."""
    p = np.asarray(p, dtype=np.float64)
    try:
        return np.linalg.cholesky(p)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite("cholesky pivot failure") from e


def inner_solve_spd(l, v):
    """Congruence l^-1 @ v @ l^-T for a triangular factor l (stacked)."""
    return np.linalg.solve(l, transpose(np.linalg.solve(l, v)))


def chol_diff(p, v):
    """Directional derivative of the Cholesky factor at p along symmetric v."""
    return chol_diff_at(chol(p), v)


def chol_diff_at(l, v):
    return l @ half_lower(inner_solve_spd(l, v))


def chol_diff_inv(l, z):
    """Inverse of the Cholesky differential: recovers v from z = chol_*(v)."""
    return l @ transpose(z) + z @ transpose(l)


def chol_backward(l, grad_l):
    """Adjoint of the SPD input of a Cholesky factorization.

    Given the factor l and the adjoint of l, returns the symmetric adjoint of
    p = l @ l.T (dl = <G, dP> with dP symmetric).
    """
    l = np.asarray(l, dtype=np.float64)
    if diagvec(l).min() <= EPS_PD:
        raise SingularFactor("cholesky factor diagonal at or below threshold")
    pmat = half_lower(transpose(l) @ grad_l)
    m = pmat + transpose(pmat)
    lt = transpose(l)
    w = transpose(np.linalg.solve(lt, transpose(np.linalg.solve(lt, m))))
    return 0.5 * sym(w)


# ---------------------------------------------------------------------------
# nilpotent triangular log/exp (finite series, Paterson-Stockmeyer order)
# ---------------------------------------------------------------------------

def _nilpotent_poly(nmat, coeffs):
    """Evaluate sum_j coeffs[j] * nmat^j for nilpotent nmat (stacked).

    Paterson-Stockmeyer order: ~2 sqrt(d) matrix products, with the inner
    block combinations fused into one tensor contraction.
    """
    d = len(coeffs) - 1
    n = nmat.shape[-1]
    eye = np.broadcast_to(np.eye(n), nmat.shape)
    if d <= 0:
        return coeffs[0] * np.array(eye)
    s = max(1, math.isqrt(d) + (0 if math.isqrt(d) ** 2 == d else 1))
    powers = [np.array(eye), np.asarray(nmat)]
    for _ in range(2, s + 1):
        powers.append(powers[-1] @ nmat)
    nblocks = (d + 1 + s - 1) // s
    cmat = np.zeros((nblocks, s))
    for j, c in enumerate(coeffs):
        cmat[j // s, j % s] = c
    stack = np.stack(powers[:s])
    blocks = np.tensordot(cmat, stack, axes=(1, 0))
    out = blocks[-1]
    for b in range(nblocks - 2, -1, -1):
        out = out @ powers[s] + blocks[b]
    return out


def _log_coeffs(d):
    return [0.0] + [(-1.0) ** (j - 1) / j for j in range(1, d + 1)]


def _exp_coeffs(d):
    c = [1.0]
    for j in range(1, d + 1):
        c.append(c[-1] / j)
    return c


def _check_unit_lower(k):
    k = np.asarray(k, dtype=np.float64)
    bad = np.abs(diagvec(k) - 1.0).max()
    if bad > 1e-12:
        raise BadDiagonal(f"diagonal off unity by {bad:.3e}")
    if np.abs(np.triu(k, 1)).max() > 0.0:
        raise BadDiagonal("matrix has entries above the diagonal")
    return k


def tri_log(k):
    """Logarithm of a unit-diagonal lower-triangular matrix (exact finite series)."""
    k = _check_unit_lower(k)
    n = k.shape[-1]
    nmat = k - np.eye(n)
    return _nilpotent_poly(nmat, _log_coeffs(n - 1))


def tri_exp(x):
    """Exponential of a strictly lower-triangular matrix (exact finite series)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    return _nilpotent_poly(x, _exp_coeffs(n - 1))


def _block_fun_diff(nbase, xi, coeffs):
    """Top-right block of the series applied to [[N, xi], [0, N]]."""
    n = nbase.shape[-1]
    shape = nbase.shape[:-2] + (2 * n, 2 * n)
    big = np.zeros(shape, dtype=np.float64)
    big[..., :n, :n] = nbase
    big[..., n:, n:] = nbase
    big[..., :n, n:] = xi
    return _nilpotent_poly(big, coeffs)[..., :n, n:]


def tri_log_diff(k, xi):
    """Directional derivative of tri_log at k along xi."""
    k = np.asarray(k, dtype=np.float64)
    n = k.shape[-1]
    nmat = k - np.eye(n)
    return _block_fun_diff(nmat, xi, _log_coeffs(2 * n - 1))


def tri_exp_diff(x, xi):
    """Directional derivative of tri_exp at x along xi."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    return _block_fun_diff(x, xi, _exp_coeffs(2 * n - 1))


def tri_log_diff_adjoint(k, zbar):
    """Adjoint of xi -> tri_log_diff(k, xi) under the Frobenius pairing."""
    k = np.asarray(k, dtype=np.float64)
    n = k.shape[-1]
    nmat = transpose(k - np.eye(n))
    return _block_fun_diff(nmat, zbar, _log_coeffs(2 * n - 1))


def tri_exp_diff_adjoint(x, zbar):
    """Adjoint of xi -> tri_exp_diff(x, xi) under the Frobenius pairing."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    return _block_fun_diff(transpose(x), zbar, _exp_coeffs(2 * n - 1))
