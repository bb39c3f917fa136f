"""Orthonormal polynomial bases on the reference simplex.

The basis is the Dubiner (Koornwinder) family written without collapsed
coordinates: every factor is generated by a homogenised Jacobi recurrence whose
arguments are affine functions, so values and gradients are polynomial
everywhere (including at the collapsed vertex).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from derham.quadrature import quadrature
from derham.simplex import reference_simplex

__all__ = ["poly_dim", "ScalarBasis", "scalar_basis", "multi_indices"]


def poly_dim(d: int, n: int) -> int:
    """Dimension of the polynomials of total degree at most ``n`` in ``d`` variables."""
    if n < 0:
        return 0
    return math.comb(n + d, d)


def multi_indices(d: int, n: int) -> list[tuple[int, ...]]:
    """Multi-indices of total degree <= n, graded then lexicographic."""
    out = []
    for deg in range(n + 1):
        if d == 1:
            out.append((deg,))
        elif d == 2:
            out.extend((i, deg - i) for i in range(deg, -1, -1))
        else:
            for i in range(deg, -1, -1):
                for j in range(deg - i, -1, -1):
                    out.append((i, j, deg - i - j))
    return out


def _homogeneous_jacobi(nmax, alpha, num, dnum, h, dh):
    """Values and gradients of ``h^m P_m^{(alpha,0)}(num/h)`` for m = 0..nmax.

    ``num`` and ``h`` are affine functions given by their point values and
    constant gradients.
    """
    npts = num.shape[0]
    dim = dnum.shape[0]
    vals = np.zeros((nmax + 1, npts))
    grads = np.zeros((nmax + 1, npts, dim))
    vals[0] = 1.0
    if nmax == 0:
        return vals, grads
    vals[1] = ((alpha + 2) * num + alpha * h) / 2
    grads[1] = ((alpha + 2) * dnum + alpha * dh)[None, :] / 2
    for m in range(1, nmax):
        a1 = 2 * (m + 1) * (m + alpha + 1) * (2 * m + alpha)
        a2 = (2 * m + alpha + 1) * alpha**2
        a3 = (2 * m + alpha) * (2 * m + alpha + 1) * (2 * m + alpha + 2)
        a4 = 2 * (m + alpha) * m * (2 * m + alpha + 2)
        lin = a2 * h + a3 * num
        dlin = a2 * dh + a3 * dnum
        vals[m + 1] = (lin * vals[m] - a4 * h**2 * vals[m - 1]) / a1
        grads[m + 1] = (
            lin[:, None] * grads[m]
            + vals[m][:, None] * dlin[None, :]
            - a4 * (h**2)[:, None] * grads[m - 1]
            - a4 * (2 * h * vals[m - 1])[:, None] * dh[None, :]
        ) / a1
    return vals, grads


def _dubiner(d: int, n: int, r: np.ndarray):
    """Unnormalised Dubiner basis on the biunit simplex, points ``r`` (npts, d)."""
    npts = r.shape[0]
    idx = multi_indices(d, n)
    vals = np.zeros((npts, len(idx)))
    grads = np.zeros((npts, len(idx), d))
    one = np.ones(npts)
    e = np.eye(d)
    if d == 1:
        v, g = _homogeneous_jacobi(n, 0.0, r[:, 0], e[0], one, np.zeros(1))
        for col, (i,) in enumerate(idx):
            vals[:, col] = v[i]
            grads[:, col] = g[i]
        return vals, grads
    if d == 2:
        x, y = r[:, 0], r[:, 1]
        qa, dqa = _homogeneous_jacobi(n, 0.0, (1 + 2 * x + y) / 2, np.array([1.0, 0.5]),
                                      (1 - y) / 2, np.array([0.0, -0.5]))
        cache = {}
        for col, (i, j) in enumerate(idx):
            if i not in cache:
                cache[i] = _homogeneous_jacobi(n - i, 2.0 * i + 1, y, e[1], one, np.zeros(2))
            rb, drb = cache[i]
            vals[:, col] = qa[i] * rb[j]
            grads[:, col] = dqa[i] * rb[j][:, None] + qa[i][:, None] * drb[j]
        return vals, grads
    x, y, z = r[:, 0], r[:, 1], r[:, 2]
    qa, dqa = _homogeneous_jacobi(n, 0.0, 1 + x + (y + z) / 2, np.array([1.0, 0.5, 0.5]),
                                  -(y + z) / 2, np.array([0.0, -0.5, -0.5]))
    cache_b, cache_c = {}, {}
    for col, (i, j, k) in enumerate(idx):
        if i not in cache_b:
            cache_b[i] = _homogeneous_jacobi(n - i, 2.0 * i + 1, (1 + 2 * y + z) / 2,
                                             np.array([0.0, 1.0, 0.5]), (1 - z) / 2,
                                             np.array([0.0, 0.0, -0.5]))
        if i + j not in cache_c:
            cache_c[i + j] = _homogeneous_jacobi(n - i - j, 2.0 * (i + j) + 2, z, e[2], one,
                                                 np.zeros(3))
        rb, drb = cache_b[i]
        sc, dsc = cache_c[i + j]
        ab = qa[i] * rb[j]
        dab = dqa[i] * rb[j][:, None] + qa[i][:, None] * drb[j]
        vals[:, col] = ab * sc[k]
        grads[:, col] = dab * sc[k][:, None] + ab[:, None] * dsc[k]
    return vals, grads


@dataclass(frozen=True)
class ScalarBasis:
    """L2-orthonormal basis of P_n on the reference simplex.

    The first ``poly_dim(d, m)`` functions span P_m for every m <= n.
    """

    d: int
    n: int
    affine: np.ndarray = field(repr=False)
    shift: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return poly_dim(self.d, self.n)

    def tabulate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values (npts, size) and gradients (npts, size, d) at reference points."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = x @ self.affine.T + self.shift
        vals, grads = _dubiner(self.d, self.n, r)
        grads = grads @ self.affine
        return vals * self.scale, grads * self.scale[None, :, None]


@lru_cache(maxsize=None)
def scalar_basis(d: int, n: int) -> ScalarBasis:
    """Cached orthonormal basis of P_n on the reference ``d``-simplex."""
    ref = reference_simplex(d)
    corners = -np.ones((d + 1, d))
    for i in range(d):
        corners[i + 1, i] = 1.0
    src = (ref.vertices[1:] - ref.vertices[0]).T
    dst = (corners[1:] - corners[0]).T
    affine = dst @ np.linalg.inv(src)
    shift = corners[0] - affine @ ref.vertices[0]
    rule = quadrature(d, 2 * n)
    pts = rule.bary @ ref.vertices
    vals, _ = _dubiner(d, n, pts @ affine.T + shift)
    norms = np.sqrt(np.einsum("q,qi,qi->i", rule.weights, vals, vals))
    return ScalarBasis(d, n, affine, shift, 1.0 / norms)
