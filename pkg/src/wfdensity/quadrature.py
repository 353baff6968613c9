"""Tensor Gauss-Hermite quadrature for expectations of N(0, I_n) functionals.

Used as the noise-free oracle against which Monte Carlo estimators and the
integration-by-parts identity are checked.
"""

from __future__ import annotations

import numpy as np


def gauss_hermite(n_coords: int, nodes: int = 40) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E g(Z), Z ~ N(0, I_{n_coords}).

    Returns points of shape (nodes**n_coords, n_coords) and weights summing
    to 1, so that ``E g(Z) ~= weights @ g(points)``.
    """
    z, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    grids = np.meshgrid(*([z] * n_coords), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wts = np.ones(1)
    for _ in range(n_coords):
        wts = np.multiply.outer(wts, w).ravel()
    return pts, wts


def expect(fn, n_coords: int, nodes: int = 40) -> np.ndarray:
    """E fn(Z) by tensor quadrature; fn maps (B, n_coords) to (B,) or (B, k)."""
    pts, wts = gauss_hermite(n_coords, nodes)
    vals = np.asarray(fn(pts))
    return np.einsum("b,b...->...", wts, vals)
