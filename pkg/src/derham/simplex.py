"""Regular reference simplex with edge length 2, centred at the origin."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = ["ReferenceSimplex", "reference_simplex", "regular_volume", "gram_schmidt_frame"]


def regular_volume(l: int) -> float:
    """Volume of a regular ``l``-simplex with edge length 2 (points have volume 1)."""
    # V = a^l / l! * sqrt((l+1)/2^l) for edge length a
    if l == 0:
        return 1.0
    return 2.0**l / math.factorial(l) * math.sqrt((l + 1) / 2.0**l)


def gram_schmidt_frame(vertices: np.ndarray) -> np.ndarray:
    """Orthonormal tangent frame (columns) of the simplex spanned by ``vertices``.

    The frame is obtained from the edge vectors ``v_i - v_0`` in order, so it
    carries the orientation induced by the vertex ordering.
    """
    vertices = np.asarray(vertices, dtype=float)
    edges = (vertices[1:] - vertices[0]).T
    if edges.shape[1] == 0:
        return np.zeros((vertices.shape[1], 0))
    q, r = np.linalg.qr(edges)
    return q * np.sign(np.diag(r))


def _helmert(n: int) -> np.ndarray:
    # rows orthonormal and orthogonal to the ones vector
    h = np.zeros((n - 1, n))
    for i in range(1, n):
        h[i - 1, :i] = 1.0
        h[i - 1, i] = -i
        h[i - 1] /= math.sqrt(i * (i + 1))
    return h


@dataclass(frozen=True)
class ReferenceSimplex:
    """Equilateral reference simplex.

    Attributes
    ----------
    d : int
        Dimension.
    vertices : ndarray, shape (d+1, d)
        Vertex coordinates; every edge has length 2 and the centroid is 0.
    """

    d: int
    vertices: np.ndarray = field(repr=False)

    @property
    def volume(self) -> float:
        return regular_volume(self.d)

    def subsimplices(self, l: int) -> list[tuple[int, ...]]:
        """Sorted vertex tuples of all ``l``-dimensional subsimplices, lexicographic."""
        return list(itertools.combinations(range(self.d + 1), l + 1))

    def canonical(self, l: int) -> tuple[int, ...]:
        return tuple(range(l + 1))

    def frame(self, sub: tuple[int, ...]) -> np.ndarray:
        """Orthonormal tangent frame of a subsimplex; identity for the cell itself."""
        if len(sub) == self.d + 1:
            return np.eye(self.d)
        return gram_schmidt_frame(self.vertices[list(sub)])

    def isometry(self, sub: tuple[int, ...]) -> np.ndarray:
        """Orthogonal matrix mapping the canonical subsimplex onto ``sub``.

        Vertex ``i`` of the canonical subsimplex is sent to ``sub[i]``; the
        remaining vertices are matched in increasing order.
        """
        rest = [i for i in range(self.d + 1) if i not in sub]
        perm = list(sub) + rest
        src = self.vertices[1:].T
        dst = self.vertices[perm[1:]].T
        # the vertex sum vanishes, so matching d vertices fixes the map
        return dst @ np.linalg.inv(src)

    def barycentric(self, x: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of points ``x`` (npts, d)."""
        a = np.vstack([self.vertices.T, np.ones(self.d + 1)])
        rhs = np.vstack([np.atleast_2d(x).T, np.ones(len(np.atleast_2d(x)))])
        return np.linalg.solve(a, rhs).T

    def barycentric_gradients(self) -> np.ndarray:
        """Constant gradients of the barycentric coordinates, shape (d+1, d)."""
        a = np.vstack([self.vertices.T, np.ones(self.d + 1)])
        return np.linalg.inv(a)[:, : self.d]

    def points(self, sub: tuple[int, ...], bary: np.ndarray) -> np.ndarray:
        """Map barycentric coordinates on subsimplex ``sub`` to reference points."""
        return np.asarray(bary) @ self.vertices[list(sub)]


@lru_cache(maxsize=None)
def reference_simplex(d: int) -> ReferenceSimplex:
    """Return the regular reference ``d``-simplex (edge length 2, centroid 0)."""
    if d not in (1, 2, 3):
        raise ValueError(f"unsupported dimension {d}")
    verts = math.sqrt(2.0) * _helmert(d + 1).T
    verts = verts - verts.mean(axis=0)
    verts.setflags(write=False)
    return ReferenceSimplex(d, verts)
