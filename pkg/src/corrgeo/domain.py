"""Domain types for the correlation manifold and its flat prototype spaces.

A correlation matrix is symmetric positive definite with unit diagonal.  The
prototype spaces are carried by plain arrays with structural validators:

* hollow symmetric  -- symmetric, zero diagonal (tangent space at I)
* row-zero symmetric -- symmetric, zero row sums
* strictly lower triangular

Vectorization contract: coordinates are row-major over (i, j) with i > j for
strictly-lower and hollow elements, and row-major over 1 <= j <= i <= m-1 on
the leading principal submatrix for row-zero elements.  The FC layers and
checkpoint layout rely on this ordering.
"""

import numpy as np

from . import linalg as la
from .errors import NonPositiveDiagonal, NotPositiveDefinite, NotSymmetric

EPS_PD = la.EPS_PD
VALIDATE_TOL = 1e-10

SQRT2 = np.sqrt(2.0)
SQRT3 = np.sqrt(3.0)
SQRT6 = np.sqrt(6.0)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate_correlation(c, tol=VALIDATE_TOL, eps_pd=EPS_PD):
    """Check symmetry, unit diagonal, and positive definiteness; raise if violated.

    Inputs violating the contract are rejected, never projected.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {c.shape}")
    la.check_symmetric(c, tol, "correlation")
    diag_gap = np.abs(la.diagvec(c) - 1.0).max()
    if diag_gap > tol:
        raise NonPositiveDiagonal(f"diagonal off unity by {diag_gap:.3e}")
    lam_min = np.linalg.eigvalsh(c).min()
    if lam_min <= eps_pd:
        raise NotPositiveDefinite(f"min eigenvalue {lam_min:.3e} <= {eps_pd:.0e}")
    return c


def is_valid_correlation(c, tol=VALIDATE_TOL, eps_pd=EPS_PD):
    try:
        validate_correlation(c, tol, eps_pd)
        return True
    except (NotSymmetric, NonPositiveDiagonal, NotPositiveDefinite):
        return False


def is_hollow(v, tol=0.0):
    v = np.asarray(v)
    return (
        np.abs(v - la.transpose(v)).max() <= max(tol, 1e-12)
        and np.abs(la.diagvec(v)).max() <= tol
    )


def is_rowzero(r, tol=VALIDATE_TOL):
    r = np.asarray(r)
    return (
        np.abs(r - la.transpose(r)).max() <= max(tol, 1e-12)
        and np.abs(r.sum(axis=-1)).max() <= tol
    )


def is_strict_lower(x):
    return np.abs(np.triu(x)).max() == 0.0


def has_unit_rows(l, tol=VALIDATE_TOL):
    """Rows of a Cholesky factor of a correlation matrix have unit L2 norm."""
    norms = np.sqrt((np.asarray(l) ** 2).sum(axis=-1))
    return np.abs(norms - 1.0).max() <= tol


# ---------------------------------------------------------------------------
# the Cor normalization and the row-normalized Cholesky map
# ---------------------------------------------------------------------------

def cor_of(sigma):
    """Normalize an SPD matrix (stack) to unit diagonal: D^-1/2 sigma D^-1/2."""
    sigma = np.asarray(sigma, dtype=np.float64)
    d = la.diagvec(sigma)
    if d.min() <= 0.0:
        raise NonPositiveDiagonal(f"diagonal entry {d.min():.3e} <= 0")
    s = 1.0 / np.sqrt(d)
    c = sigma * s[..., :, None] * s[..., None, :]
    idx = np.arange(c.shape[-1])
    c[..., idx, idx] = 1.0
    return c


def cor_of_backward(sigma, grad_c):
    """Symmetric adjoint of sigma -> cor_of(sigma).

    The unit diagonal of the output is constant, so any diagonal component of
    grad_c cancels analytically.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    d = la.diagvec(sigma)
    s = 1.0 / np.sqrt(d)
    c = cor_of(sigma)
    g = np.asarray(grad_c, dtype=np.float64)
    term = g * s[..., :, None] * s[..., None, :]
    gc = g @ c
    cg = c @ g
    diag = la.diagvec(gc) + la.diagvec(cg)
    term2 = la.diag_from_vec(0.5 * diag / d)
    return la.sym(term - term2)


def theta(c):
    """Cholesky factor rescaled to unit diagonal (stacked)."""
    l = la.chol(c)
    return l / la.diagvec(l)[..., :, None]


def theta_inv(k):
    """Inverse of the unit-diagonal Cholesky map: cor_of(k k^T)."""
    k = np.asarray(k, dtype=np.float64)
    return cor_of(k @ la.transpose(k))


# ---------------------------------------------------------------------------
# random sampling
# ---------------------------------------------------------------------------

def random_symmetric(n, rng, scale=1.0):
    a = rng.standard_normal((n, n))
    s = np.tril(a, -1)
    s = s + s.T + np.diag(np.diagonal(a))
    return scale * s


def random_correlation(n, spread=1.0, rng=None):
    """Random correlation matrix: cor_of(expm(spread * S)), S symmetric N(0,1).

    Full rank for any spread; deterministic for a seeded generator.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if spread <= 0.0:
        raise ValueError("spread must be positive")
    rng = np.random.default_rng(rng)
    s = random_symmetric(n, rng)
    return cor_of(la.sym_exp(spread * s))


def random_hollow(n, rng, scale=1.0):
    s = random_symmetric(n, rng, scale)
    np.fill_diagonal(s, 0.0)
    return s


# ---------------------------------------------------------------------------
# coordinates in the prototype spaces (row-major contracts)
# ---------------------------------------------------------------------------

def lt0_dim(m):
    return m * (m - 1) // 2


def lt0_coords(x):
    """Strictly-lower entries, row-major."""
    i, j = np.tril_indices(x.shape[-1], -1)
    return np.asarray(x)[..., i, j]


def lt0_from_coords(v, m):
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (m, m))
    i, j = np.tril_indices(m, -1)
    out[..., i, j] = v
    return out


def hol_coords(h):
    """Coordinates of a hollow symmetric element: sqrt(2) * lower entries."""
    return SQRT2 * lt0_coords(h)


def hol_from_coords(v, m):
    low = lt0_from_coords(np.asarray(v) / SQRT2, m)
    return low + la.transpose(low)


def rowzero_coords(r):
    """Coordinates of a row-zero element from its leading principal submatrix.

    Off-diagonal entries scale by sqrt(6), diagonal entries by sqrt(3);
    row-major over 1 <= j <= i <= m-1.
    """
    r = np.asarray(r)
    m = r.shape[-1]
    i, j = np.tril_indices(m - 1)
    scale = np.where(i == j, SQRT3, SQRT6)
    return scale * r[..., i, j]


def rowzero_from_coords(v, m):
    """Rebuild a row-zero element: leading submatrix plus the unique completion."""
    v = np.asarray(v, dtype=np.float64)
    i, j = np.tril_indices(m - 1)
    scale = np.where(i == j, SQRT3, SQRT6)
    lead = np.zeros(v.shape[:-1] + (m - 1, m - 1))
    lead[..., i, j] = v / scale
    lead = lead + la.transpose(np.tril(lead, -1))
    out = np.zeros(v.shape[:-1] + (m, m))
    out[..., : m - 1, : m - 1] = lead
    row_sums = lead.sum(axis=-1)
    out[..., : m - 1, m - 1] = -row_sums
    out[..., m - 1, : m - 1] = -row_sums
    out[..., m - 1, m - 1] = row_sums.sum(axis=-1)
    return out


def rowzero_inner(a, b):
    """Inner product under which the row-zero coordinate basis is orthonormal."""
    return np.sum(rowzero_coords(a) * rowzero_coords(b), axis=-1)


# ---------------------------------------------------------------------------
# orthonormal bases backing the FC layers
# ---------------------------------------------------------------------------

def hol_basis(m):
    """Basis of hollow symmetric matrices, (E_ij + E_ji)/sqrt(2), i > j row-major."""
    if m < 2:
        raise ValueError("need m >= 2")
    d = lt0_dim(m)
    return hol_from_coords(np.eye(d), m)


def rowzero_basis(m):
    """Basis of row-zero symmetric matrices dual to the row-zero coordinates.

    Each element is the zero-row-sum completion of a scaled principal-submatrix
    unit, e.g. (E_ii - E_im - E_mi + E_mm)/sqrt(3) for a diagonal slot.
    """
    if m < 2:
        raise ValueError("need m >= 2")
    d = lt0_dim(m)
    return rowzero_from_coords(np.eye(d), m)
