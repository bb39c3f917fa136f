"""Collapsed-coordinate Gauss-Jacobi quadrature on simplices."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from derham.simplex import regular_volume

__all__ = ["QuadratureRule", "quadrature"]


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature rule on the regular reference ``dim``-simplex.

    Attributes
    ----------
    dim : int
        Simplex dimension (0 gives the single-point rule).
    degree : int
        Polynomial exactness degree.
    bary : ndarray, shape (npts, dim+1)
        Barycentric coordinates of the points.
    weights : ndarray, shape (npts,)
        Weights summing to the volume of the regular simplex with edge 2.
    """

    dim: int
    degree: int
    bary: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)


def _gauss_jacobi(m: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_jacobi(m, alpha, 0.0)
    return x, w


@lru_cache(maxsize=None)
def quadrature(dim: int, degree: int) -> QuadratureRule:
    """Return a rule on the reference ``dim``-simplex exact to ``degree``.

    The rule is the Duffy-collapsed tensor product of Gauss-Jacobi rules with
    ``degree // 2 + 1`` points per direction.

    Examples
    --------
    >>> rule = quadrature(2, 1)
    >>> len(rule)
    1
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if dim == 0:
        return QuadratureRule(0, degree, np.ones((1, 1)), np.ones(1))
    m = degree // 2 + 1
    xa, wa = _gauss_jacobi(m, 0.0)
    if dim == 1:
        pts = xa[:, None]
        w = wa
    elif dim == 2:
        xb, wb = _gauss_jacobi(m, 1.0)
        a, b = np.meshgrid(xa, xb, indexing="ij")
        wgt = np.outer(wa, wb) / 2.0
        x = (1 + a) * (1 - b) / 2 - 1
        pts = np.column_stack([x.ravel(), b.ravel()])
        w = wgt.ravel()
    elif dim == 3:
        xb, wb = _gauss_jacobi(m, 1.0)
        xc, wc = _gauss_jacobi(m, 2.0)
        a, b, c = np.meshgrid(xa, xb, xc, indexing="ij")
        wgt = np.einsum("i,j,k->ijk", wa, wb, wc) / 8.0
        x = (1 + a) * (1 - b) * (1 - c) / 4 - 1
        y = (1 + b) * (1 - c) / 2 - 1
        pts = np.column_stack([x.ravel(), y.ravel(), c.ravel()])
        w = wgt.ravel()
    else:
        raise ValueError(f"unsupported dimension {dim}")
    lam = (1 + pts) / 2
    bary = np.column_stack([1 - lam.sum(axis=1), lam])
    w = w / w.sum() * regular_volume(dim)
    bary.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(dim, degree, bary, w)
