"""Gaussian quadrature rules for the replica integrals.

``Dz`` is the standard normal measure on each axis; complex measures are the
product of two unit-variance axes, so that ``int Dzeta |zeta|^2 = 2``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import DomainError

SPAN = 9.0          # |z| beyond this carries < 1e-18 of Gaussian mass
PANEL_ORDER = 8     # Gauss-Legendre points per panel


def gauss_hermite_nodes(n: int, field: str = "real"):
    """Gauss-Hermite rule for the unit-variance Gaussian measure.

    Parameters
    ----------
    n : int
        Points per axis (``n >= 8``).
    field : {"real", "complex"}
        ``"complex"`` returns the ``n*n`` tensor product as complex nodes.

    Returns
    -------
    nodes, weights : ndarray
        Weights sum to one; the real rule is exact for polynomials of degree
        up to ``2n - 1``.
    """
    if int(n) != n or n < 8:
        raise DomainError(f"Gauss-Hermite order must be an integer >= 8, got {n}")
    z, w = np.polynomial.hermite_e.hermegauss(int(n))
    w = w / np.sqrt(2.0 * np.pi)
    if field == "real":
        return z, w
    if field == "complex":
        nodes = (z[:, None] + 1j * z[None, :]).ravel()
        return nodes, np.outer(w, w).ravel()
    raise DomainError(f"field must be 'real' or 'complex', got {field!r}")


@lru_cache(maxsize=None)
def _legendre(order: int):
    return np.polynomial.legendre.leggauss(order)


def composite_gauss(lo: float, hi: float, width: float, order: int = PANEL_ORDER):
    """Composite Gauss-Legendre rule on ``[lo, hi]`` against the normal density.

    Panels are at most ``width`` wide.  Suited to integrands with features
    much narrower than the Gaussian, where Gauss-Hermite converges slowly.
    """
    n_panels = max(1, int(np.ceil((hi - lo) / width - 1e-9)))
    t, wt = _legendre(order)
    edges = np.linspace(lo, hi, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    z = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    w = (half[:, None] * wt[None, :]).ravel() * np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    return z, w


@lru_cache(maxsize=256)
def _standard(n_panels: int, dim: int):
    z, w = composite_gauss(-SPAN, SPAN, 2 * SPAN / n_panels)
    if dim == 2:
        z, w = (z[:, None] + 1j * z[None, :]).ravel(), np.outer(w, w).ravel()
    z.flags.writeable = False
    w.flags.writeable = False
    return z, w


def scaled_rule(scale: float, dim: int):
    """Rule for ``int Dz f(scale * z + c)`` with ``f`` varying on unit scale.

    Panel width in ``z`` is ``min(1, 1/scale)``.  ``dim=2`` returns complex
    nodes for the product measure on two axes.
    """
    if dim not in (1, 2):
        raise DomainError(f"dim must be 1 or 2, got {dim}")
    width = min(1.0, 1.0 / max(scale, 1e-300))
    n_panels = int(np.ceil(2 * SPAN / width - 1e-9))
    return _standard(n_panels, dim)
