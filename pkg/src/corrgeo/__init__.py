"""Riemannian geometry and trainable layers on full-rank correlation matrices."""

__version__ = "0.1.0"

from . import domain, geometry, hyperbolic, layers, linalg, solvers  # noqa: F401
