"""Conforming simplicial meshes with sorted-vertex orientation."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from derham.simplex import reference_simplex

__all__ = [
    "SimplicialMesh",
    "StarPatch",
    "CellMap",
    "build_freudenthal",
    "build_unit_triangle_mesh",
    "refine_bey",
    "build_fichera",
    "star",
    "cell_map",
    "single_cell_mesh",
]

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


@dataclass(eq=False)
class SimplicialMesh:
    """Simplicial complex with canonical (sorted) subsimplex tables.

    Attributes
    ----------
    dim : int
    vertices : ndarray (nv, dim)
    cells : ndarray (nc, dim+1)
        Vertex indices in increasing order.
    entities : list of ndarray
        ``entities[l]`` has shape (n_l, l+1): sorted vertex tuples in
        lexicographic order.
    cell_entities : list of ndarray
        ``cell_entities[l][c, i]`` is the index of the i-th local
        l-subsimplex of cell c, in the order of ``ReferenceSimplex.subsimplices``.
    facet_markers : dict
        Boundary facet index -> 'dirichlet' or 'neumann'.
    refine_order : ndarray (nc, dim+1), optional
        Vertex order used by Bey refinement (a permutation of each cell).
    parent : ndarray (nc,), optional
        Coarse cell containing each cell, for refined meshes.
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    entities: list = field(repr=False)
    cell_entities: list = field(repr=False)
    facet_markers: dict = field(default_factory=dict, repr=False)
    refine_order: np.ndarray | None = field(default=None, repr=False)
    parent: np.ndarray | None = field(default=None, repr=False)
    parent_mesh: "SimplicialMesh | None" = field(default=None, repr=False)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    def num_entities(self, l: int) -> int:
        return len(self.entities[l])

    @cached_property
    def incidence(self) -> list:
        """Sparse cell-by-entity incidence matrices, one per dimension."""
        out = []
        nc = self.num_cells
        for l in range(self.dim + 1):
            ce = self.cell_entities[l]
            rows = np.repeat(np.arange(nc), ce.shape[1])
            out.append(sp.csr_matrix((np.ones(ce.size), (rows, ce.ravel())),
                                     shape=(nc, self.num_entities(l))))
        return out

    @cached_property
    def entity_cells(self) -> list:
        """For each dimension, CSC incidence used to list the cells around an entity."""
        return [m.tocsc() for m in self.incidence]

    def cells_of(self, l: int, index: int) -> np.ndarray:
        m = self.entity_cells[l]
        return np.sort(m.indices[m.indptr[index] : m.indptr[index + 1]])

    @cached_property
    def boundary_facets(self) -> np.ndarray:
        counts = np.asarray(self.incidence[self.dim - 1].sum(axis=0)).ravel()
        return np.flatnonzero(counts == 1)

    def mark_boundary(self, marker: str, predicate=None) -> None:
        """Tag boundary facets; ``predicate(centroid) -> bool`` selects a subset."""
        for f in self.boundary_facets:
            cen = self.vertices[self.entities[self.dim - 1][f]].mean(axis=0)
            if predicate is None or predicate(cen):
                self.facet_markers[int(f)] = marker

    def dirichlet_entities(self, l: int) -> np.ndarray:
        """Indices of l-entities lying on Dirichlet facets."""
        facets = [f for f, m in self.facet_markers.items() if m == DIRICHLET]
        if not facets:
            return np.zeros(0, dtype=int)
        verts = self.entities[self.dim - 1][facets]
        found = set()
        lookup = self.entity_lookup(l)
        for fv in verts:
            for sub in itertools.combinations(fv, l + 1):
                found.add(lookup[sub])
        return np.array(sorted(found), dtype=int)

    def entity_lookup(self, l: int) -> dict:
        return self._lookups[l]

    @cached_property
    def _lookups(self) -> list:
        return [{tuple(int(v) for v in e): i for i, e in enumerate(ents)} for ents in self.entities]

    @cached_property
    def volumes(self) -> np.ndarray:
        x = self.vertices[self.cells]
        edges = x[:, 1:] - x[:, :1]
        return np.abs(np.linalg.det(edges)) / math.factorial(self.dim)

    @cached_property
    def orientation(self) -> np.ndarray:
        """Sign of det J for each cell."""
        x = self.vertices[self.cells]
        return np.sign(np.linalg.det(x[:, 1:] - x[:, :1])).astype(int)

    @cached_property
    def diameters(self) -> np.ndarray:
        x = self.vertices[self.cells]
        d = np.linalg.norm(x[:, :, None, :] - x[:, None, :, :], axis=-1)
        return d.max(axis=(1, 2))

    def euler_characteristic(self) -> int:
        return sum((-1) ** l * self.num_entities(l) for l in range(self.dim + 1))

    def dump(self, path) -> None:
        """Write the plain-text form: header ``dim nv nc``, vertex rows, cell rows."""
        with open(path, "w") as fh:
            fh.write(f"{self.dim} {self.num_vertices} {self.num_cells}\n")
            for v in self.vertices:
                fh.write(" ".join(repr(float(c)) for c in v) + "\n")
            for c in self.cells:
                fh.write(" ".join(str(int(i)) for i in c) + "\n")


def _from_cells(vertices, cells, refine_order=None, parent=None, parent_mesh=None) -> SimplicialMesh:
    vertices = np.asarray(vertices, dtype=float)
    cells = np.sort(np.asarray(cells, dtype=np.int64), axis=1)
    dim = cells.shape[1] - 1
    entities, cell_entities = [], []
    for l in range(dim + 1):
        local = list(itertools.combinations(range(dim + 1), l + 1))
        allsub = cells[:, local].reshape(-1, l + 1)
        uniq, inv = np.unique(allsub, axis=0, return_inverse=True)
        entities.append(uniq)
        cell_entities.append(inv.reshape(len(cells), len(local)))
    vol = np.linalg.det(vertices[cells][:, 1:] - vertices[cells][:, :1])
    if np.any(np.abs(vol) < 1e-14 * np.max(np.abs(vol))):
        raise ValueError("degenerate cell in mesh")
    mesh = SimplicialMesh(dim, vertices, cells, entities, cell_entities,
                          refine_order=refine_order, parent=parent, parent_mesh=parent_mesh)
    mesh.mark_boundary(NEUMANN)
    return mesh


def _grid_index(n):
    return lambda i, j, k: i + (n + 1) * (j + (n + 1) * k)


def _freudenthal_cells(n, keep=None):
    idx = _grid_index(n)
    cells, orders = [], []
    unit = np.eye(3, dtype=int)
    for k, j, i in itertools.product(range(n), repeat=3):
        if keep is not None and not keep(i, j, k):
            continue
        for perm in itertools.permutations(range(3)):
            path = [np.array([i, j, k])]
            for axis in perm:
                path.append(path[-1] + unit[axis])
            verts = [idx(*pt) for pt in path]
            orders.append(verts)
            cells.append(sorted(verts))
    return np.array(cells), np.array(orders)


def build_freudenthal(n: int) -> SimplicialMesh:
    """Unit cube split into n^3 subcubes, each cut into 6 tetrahedra along its diagonal.

    Examples
    --------
    >>> build_freudenthal(1).num_cells
    6
    """
    if n < 1:
        raise ValueError("n must be positive")
    g = np.linspace(0.0, 1.0, n + 1)
    z, y, x = np.meshgrid(g, g, g, indexing="ij")
    verts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    cells, orders = _freudenthal_cells(n)
    return _from_cells(verts, cells, refine_order=orders)


def build_fichera(n: int) -> SimplicialMesh:
    """Fichera corner (0,1)^3 minus (1/2,1)^3 with Freudenthal cubes of side 1/n."""
    if n < 2 or n % 2:
        raise ValueError("Fichera mesh needs an even n >= 2")
    h = n // 2
    keep = lambda i, j, k: not (i >= h and j >= h and k >= h)  # noqa: E731
    cells, orders = _freudenthal_cells(n, keep)
    g = np.linspace(0.0, 1.0, n + 1)
    z, y, x = np.meshgrid(g, g, g, indexing="ij")
    verts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    used = np.unique(cells)
    renum = -np.ones(len(verts), dtype=int)
    renum[used] = np.arange(len(used))
    return _from_cells(verts[used], renum[cells], refine_order=renum[orders])


def build_unit_triangle_mesh(n: int) -> SimplicialMesh:
    """Unit square split into n^2 squares, each cut into two triangles."""
    if n < 1:
        raise ValueError("n must be positive")
    g = np.linspace(0.0, 1.0, n + 1)
    y, x = np.meshgrid(g, g, indexing="ij")
    verts = np.column_stack([x.ravel(), y.ravel()])
    idx = lambda i, j: i + (n + 1) * j  # noqa: E731
    cells = []
    for j, i in itertools.product(range(n), repeat=2):
        cells.append([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)])
        cells.append([idx(i, j), idx(i, j + 1), idx(i + 1, j + 1)])
    return _from_cells(verts, cells)


def single_cell_mesh(vertices) -> SimplicialMesh:
    """Mesh made of one simplex with the given vertices (in the given order)."""
    vertices = np.asarray(vertices, dtype=float)
    return _from_cells(vertices, [list(range(len(vertices)))])


_BEY_CHILDREN = [
    (0, 4, 5, 6), (4, 1, 7, 8), (5, 7, 2, 9), (6, 8, 9, 3),
    (4, 5, 6, 8), (4, 5, 7, 8), (5, 6, 8, 9), (5, 7, 8, 9),
]
# local points: 0..3 vertices, 4=x01, 5=x02, 6=x03, 7=x12, 8=x13, 9=x23


def refine_bey(mesh: SimplicialMesh) -> SimplicialMesh:
    """Uniform 8-child refinement with Bey's ordering rule.

    Children inherit Bey's vertex order; the stored cells are re-sorted for
    orientation while ``refine_order`` keeps Bey's order for later levels.
    """
    if mesh.dim != 3:
        raise ValueError("Bey refinement requires a tetrahedral mesh")
    nv = mesh.num_vertices
    edges = mesh.entities[1]
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    verts = np.vstack([mesh.vertices, mids])
    lookup = mesh.entity_lookup(1)
    order = mesh.refine_order if mesh.refine_order is not None else mesh.cells
    orders, parent = [], []
    for c, o in enumerate(order):
        pts = list(o)
        for a, b in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]:
            e = tuple(sorted((int(o[a]), int(o[b]))))
            pts.append(nv + lookup[e])
        for child in _BEY_CHILDREN:
            v = [pts[i] for i in child]
            orders.append(v)
            parent.append(c)
    # lexicographic vertex numbering keeps the fine mesh translation-periodic
    # on structured inputs, so congruent cells share one Jacobian class
    perm = np.lexsort(np.round(verts, 12).T)
    rank = np.empty_like(perm)
    rank[perm] = np.arange(len(perm))
    orders = rank[np.array(orders)]
    cells = np.sort(orders, axis=1)
    fine = _from_cells(verts[perm], cells, refine_order=orders, parent=np.array(parent),
                       parent_mesh=mesh)
    return fine


# -------------------------------------------------------------------------- stars


@dataclass(frozen=True)
class StarPatch:
    """All cells containing a seed entity and the entities owned by the patch.

    ``interior_entities[m]`` lists the m-entities containing the seed and not
    lying on a Dirichlet facet; these carry the basis functions supported in
    the star.
    """

    seed: tuple[int, int]
    cells: np.ndarray
    closed_entities: dict
    interior_entities: dict


def _contains(ents: np.ndarray, seed_verts: np.ndarray) -> np.ndarray:
    """Rows of ``ents`` whose vertex set contains every seed vertex."""
    return np.all([np.any(ents == v, axis=1) for v in seed_verts], axis=0)


def star(mesh: SimplicialMesh, entity: tuple[int, int], dirichlet: dict | None = None) -> StarPatch:
    """Star of ``entity = (l, index)``.

    Parameters
    ----------
    dirichlet : dict, optional
        Maps dimension m to the indices of m-entities on Gamma_D; defaults to
        the mesh markers.
    """
    l, index = entity
    cells = mesh.cells_of(l, index)
    seed_verts = mesh.entities[l][index]
    closed, interior = {}, {}
    for m in range(mesh.dim + 1):
        ids = np.unique(mesh.cell_entities[m][cells].ravel())
        closed[m] = ids
        if m < l:
            interior[m] = np.zeros(0, dtype=int)
            continue
        mask = _contains(mesh.entities[m][ids], seed_verts)
        inner = ids[mask]
        bad = dirichlet[m] if dirichlet is not None else mesh.dirichlet_entities(m)
        interior[m] = np.setdiff1d(inner, bad)
    return StarPatch((l, index), cells, closed, interior)


# ---------------------------------------------------------------------- cell maps


@dataclass(frozen=True)
class CellMap:
    """Affine map x = J xhat + b from the reference simplex onto a cell."""

    cell: int
    jacobian: np.ndarray
    shift: np.ndarray

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.jacobian))

    @property
    def inv_transpose(self) -> np.ndarray:
        return np.linalg.inv(self.jacobian).T

    def __call__(self, xhat: np.ndarray) -> np.ndarray:
        return np.asarray(xhat) @ self.jacobian.T + self.shift


def cell_jacobians(mesh: SimplicialMesh) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians (nc, d, d) and shifts (nc, d) of all cell maps."""
    ref = reference_simplex(mesh.dim)
    src_inv = np.linalg.inv((ref.vertices[1:] - ref.vertices[0]).T)
    x = mesh.vertices[mesh.cells]
    jac = np.einsum("cij,jk->cik", (x[:, 1:] - x[:, :1]).transpose(0, 2, 1), src_inv)
    shift = x[:, 0] - np.einsum("cij,j->ci", jac, ref.vertices[0])
    return jac, shift


def cell_map(mesh: SimplicialMesh, cell: int) -> CellMap:
    """Reference vertex i is mapped to the i-th (sorted) vertex of ``cell``."""
    jac, shift = cell_jacobians(mesh)
    if abs(np.linalg.det(jac[cell])) < 1e-14:
        raise ValueError(f"cell {cell} is degenerate")
    return CellMap(cell, jac[cell], shift[cell])
