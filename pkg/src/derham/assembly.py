"""Global dof numbering, pullback assembly and Whitney-space transfer operators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from derham.costs import CostLedger
from derham.mesh import SimplicialMesh, cell_jacobians
from derham.reference import (
    ReferenceElement,
    SpaceTag,
    component_matrices,
    reference_element,
    trace_forms,
)
from derham.simplex import reference_simplex

__all__ = [
    "GlobalSpace",
    "GlobalOperator",
    "number_dofs",
    "assemble_operator",
    "assemble_submatrix",
    "whitney_restriction",
    "whitney_prolongation",
    "derivative_matrix",
    "reference_derivative",
    "value_transform",
    "evaluate_field",
    "load_vector",
    "derivative_transform",
]

KIND_CODE = {"whitney": 0, "typeI": 1, "typeII": 2}


@dataclass(eq=False)
class GlobalSpace:
    """Global numbering of an element space on a mesh.

    Dofs are numbered by entity dimension, then entity index, then local
    index; Dirichlet dofs are removed and the remaining ("free") dofs are
    renumbered contiguously in the same order.

    Attributes
    ----------
    cell_dofs : ndarray (nc, nloc)
        Free index of each local basis function (-1 if constrained).
    dof_dim, dof_entity, dof_kind, dof_j : ndarrays (n,)
        Entity dimension and index, kind code (0 Whitney, 1 type-I,
        2 type-II) and eigen index of each free dof.
    """

    mesh: SimplicialMesh
    element: ReferenceElement
    cell_dofs: np.ndarray = field(repr=False)
    n: int
    ntotal: int
    dof_dim: np.ndarray = field(repr=False)
    dof_entity: np.ndarray = field(repr=False)
    dof_kind: np.ndarray = field(repr=False)
    dof_j: np.ndarray = field(repr=False)
    per_entity: tuple = ()
    constrained: np.ndarray = field(default=None, repr=False)

    @property
    def tag(self) -> SpaceTag:
        return self.element.tag

    def _where(self, mask) -> np.ndarray:
        return np.flatnonzero(mask)

    @cached_property
    def interior(self) -> np.ndarray:
        return self._where(self.dof_dim == self.mesh.dim)

    @cached_property
    def interface(self) -> np.ndarray:
        return self._where(self.dof_dim < self.mesh.dim)

    @cached_property
    def type1(self) -> np.ndarray:
        return self._where(self.dof_kind != 2)

    @cached_property
    def type2(self) -> np.ndarray:
        return self._where(self.dof_kind == 2)

    @cached_property
    def whitney(self) -> np.ndarray:
        return self._where(self.dof_kind == 0)

    @cached_property
    def _entity_index(self) -> dict:
        out = {}
        order = np.lexsort((self.dof_entity, self.dof_dim))
        keys = self.dof_dim[order] * (1 << 40) + self.dof_entity[order]
        starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
        stops = np.r_[starts[1:], len(keys)]
        for a, b in zip(starts, stops):
            i = order[a]
            out[(int(self.dof_dim[i]), int(self.dof_entity[i]))] = order[a:b]
        return out

    def entity_dofs(self, l: int, index: int) -> np.ndarray:
        return self._entity_index.get((l, int(index)), np.zeros(0, dtype=int))

    def dofs_of(self, entities: dict, mask: np.ndarray | None = None) -> np.ndarray:
        """Free dofs attached to ``entities[l]`` for every l, optionally filtered."""
        parts = [self.entity_dofs(l, e) for l, ids in entities.items() for e in ids]
        idx = np.concatenate(parts) if parts else np.zeros(0, dtype=int)
        idx = np.sort(idx.astype(int))
        if mask is not None:
            idx = idx[mask[idx]]
        return idx

    @cached_property
    def cells_of_dof(self) -> sp.csr_matrix:
        nc, nloc = self.cell_dofs.shape
        rows = self.cell_dofs.ravel()
        cols = np.repeat(np.arange(nc), nloc)
        ok = rows >= 0
        return sp.csr_matrix((np.ones(ok.sum()), (rows[ok], cols[ok])), shape=(self.n, nc))


def number_dofs(mesh: SimplicialMesh, element: ReferenceElement | SpaceTag,
                dirichlet: bool = True) -> GlobalSpace:
    """Build the global numbering of ``element`` on ``mesh``.

    Dofs attached to entities on Dirichlet-marked facets are constrained
    (eliminated) when ``dirichlet`` is true.
    """
    if isinstance(element, SpaceTag):
        element = reference_element(element)
    d = mesh.dim
    if element.tag.d != d:
        raise ValueError("element and mesh dimensions differ")
    ref = reference_simplex(d)
    tags = element.dof_tags
    per_entity = []
    for l in range(d + 1):
        per_entity.append(len(element.entity_dofs(l, 0)))
    offsets = np.cumsum([0] + [per_entity[l] * mesh.num_entities(l) for l in range(d + 1)])
    ntotal = int(offsets[-1])
    # position of each local dof inside its entity block
    pos = np.zeros(len(tags), dtype=int)
    for l in range(d + 1):
        for e in range(len(ref.subsimplices(l))):
            ids = element.entity_dofs(l, e)
            pos[ids] = np.arange(len(ids))
    ldim = np.array([t.dim for t in tags])
    lent = np.array([t.entity for t in tags])
    nc = mesh.num_cells
    gl = np.zeros((nc, len(tags)), dtype=np.int64)
    for i in range(len(tags)):
        ent = mesh.cell_entities[ldim[i]][:, lent[i]]
        gl[:, i] = offsets[ldim[i]] + ent * per_entity[ldim[i]] + pos[i]
    # per-global-dof descriptors
    gdim = np.concatenate([np.full(per_entity[l] * mesh.num_entities(l), l) for l in range(d + 1)])
    gent = np.concatenate([np.repeat(np.arange(mesh.num_entities(l)), per_entity[l])
                           for l in range(d + 1)])
    kind0 = np.array([KIND_CODE[tags[i].kind] for i in range(len(tags))])
    jj0 = np.array([t.j for t in tags])
    gkind = np.zeros(ntotal, dtype=int)
    gj = np.zeros(ntotal, dtype=int)
    gkind[gl.ravel()] = np.tile(kind0, nc)
    gj[gl.ravel()] = np.tile(jj0, nc)
    constrained = np.zeros(0, dtype=int)
    if dirichlet:
        parts = []
        for l in range(element.tag.k, d):
            bad = mesh.dirichlet_entities(l)
            if len(bad) and per_entity[l]:
                parts.append((offsets[l] + bad[:, None] * per_entity[l]
                              + np.arange(per_entity[l])[None, :]).ravel())
        if parts:
            constrained = np.unique(np.concatenate(parts))
    keep = np.ones(ntotal, dtype=bool)
    keep[constrained] = False
    renum = -np.ones(ntotal, dtype=np.int64)
    renum[keep] = np.arange(keep.sum())
    return GlobalSpace(
        mesh=mesh,
        element=element,
        cell_dofs=renum[gl],
        n=int(keep.sum()),
        ntotal=ntotal,
        dof_dim=gdim[keep],
        dof_entity=gent[keep],
        dof_kind=gkind[keep],
        dof_j=gj[keep],
        per_entity=tuple(per_entity),
        constrained=constrained,
    )


# -------------------------------------------------------------------- pullbacks


def value_transform(pullback: str, jac: np.ndarray) -> np.ndarray:
    """Matrices G (nc, m, m) with physical values = G @ reference values."""
    det = np.linalg.det(jac)
    if pullback == "grad" or pullback == "l2":
        g = np.ones((len(jac), 1, 1))
        return g if pullback == "grad" else g / det[:, None, None]
    if pullback == "curl":
        return np.linalg.inv(jac).transpose(0, 2, 1)
    return jac / det[:, None, None]


def derivative_transform(tag: SpaceTag, jac: np.ndarray) -> np.ndarray:
    k, d = tag.k, tag.d
    if k == d:
        return np.zeros((len(jac), 0, 0))
    if k == 0:
        return value_transform("curl", jac)
    if k == 1 and d == 3:
        return value_transform("div", jac)
    return value_transform("l2", jac)


def _jacobian_classes(jac: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scale = np.abs(jac).max()
    key = np.round(jac.reshape(len(jac), -1) / scale, 11)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return first, inv.ravel()


@dataclass(eq=False)
class GlobalOperator:
    """Matrix-free a(u, v) = (u, beta v) + (d u, alpha d v) on a GlobalSpace.

    Element matrices are cached per class of identical Jacobians and applied
    in batches; contributions are summed with ``np.bincount`` so the result
    does not depend on evaluation order.
    """

    space: GlobalSpace
    alpha: float
    beta: float
    cell_class: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)
    stiff: np.ndarray = field(repr=False)
    ledger: CostLedger = field(default_factory=CostLedger, repr=False)

    @property
    def n(self) -> int:
        return self.space.n

    @cached_property
    def class_matrices(self) -> np.ndarray:
        return self.beta * self.mass + self.alpha * self.stiff

    @cached_property
    def _groups(self):
        groups = []
        cd = self.space.cell_dofs
        for c in range(len(self.mass)):
            cells = np.flatnonzero(self.cell_class == c)
            idx = cd[cells]
            groups.append((c, cells, np.where(idx < 0, self.n, idx)))
        return groups

    def element_matrix(self, cell: int) -> np.ndarray:
        return self.class_matrices[self.cell_class[cell]]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        xe = np.append(x, 0.0)
        out = np.zeros(self.n + 1)
        nloc = self.space.cell_dofs.shape[1]
        for c, cells, idx in self._groups:
            y = xe[idx] @ self.class_matrices[c]
            out += np.bincount(idx.ravel(), weights=y.ravel(), minlength=self.n + 1)
        self.ledger.add("operator_apply", 2 * nloc * nloc * self.space.mesh.num_cells)
        return out[: self.n]

    __call__ = matvec

    def diagonal(self) -> np.ndarray:
        out = np.zeros(self.n + 1)
        for c, cells, idx in self._groups:
            dg = np.diag(self.class_matrices[c])
            out += np.bincount(idx.ravel(), weights=np.tile(dg, len(cells)), minlength=self.n + 1)
        return out[: self.n]

    def to_sparse(self) -> sp.csr_matrix:
        """Explicitly assembled matrix (verification at desk scale only)."""
        rows, cols, vals = [], [], []
        for c, cells, idx in self._groups:
            a = self.class_matrices[c]
            rows.append(np.repeat(idx, idx.shape[1], axis=1).ravel())
            cols.append(np.tile(idx, (1, idx.shape[1])).ravel())
            vals.append(np.tile(a.ravel(), len(cells)))
        m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.n + 1, self.n + 1)).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return m[: self.n, : self.n]

    def scaled(self, factor: float) -> "GlobalOperator":
        return GlobalOperator(self.space, self.alpha * factor, self.beta * factor,
                              self.cell_class, self.mass, self.stiff, self.ledger)


def assemble_operator(space: GlobalSpace, alpha: float = 1.0, beta: float = 1.0,
                      ledger: CostLedger | None = None) -> GlobalOperator:
    """Riesz-map operator of ``space`` with constant coefficients."""
    if alpha < 0 or beta < 0 or alpha == beta == 0:
        raise ValueError("need alpha, beta >= 0, not both zero")
    mesh, el = space.mesh, space.element
    jac, _ = cell_jacobians(mesh)
    det = np.linalg.det(jac)
    if np.any(np.abs(det) < 1e-300):
        raise ValueError("zero Jacobian determinant")
    first, inv = _jacobian_classes(jac)
    cm, ck = component_matrices(el)
    jc = jac[first]
    gv = value_transform(el.tag.pullback, jc)
    gd = derivative_transform(el.tag, jc)
    adet = np.abs(det[first])
    bv = np.einsum("cma,cmb->cab", gv, gv) * adet[:, None, None]
    mass = np.einsum("cab,abij->cij", bv, cm)
    if el.tag.dcomp:
        bd = np.einsum("cma,cmb->cab", gd, gd) * adet[:, None, None]
        stiff = np.einsum("cab,abij->cij", bd, ck)
    else:
        stiff = np.zeros_like(mass)
    mass = 0.5 * (mass + mass.transpose(0, 2, 1))
    stiff = 0.5 * (stiff + stiff.transpose(0, 2, 1))
    return GlobalOperator(space, float(alpha), float(beta), inv, mass, stiff,
                          ledger if ledger is not None else CostLedger())


def assemble_submatrix(op: GlobalOperator, idx: np.ndarray, cells: np.ndarray | None = None,
                       matrices: np.ndarray | None = None) -> np.ndarray:
    """Dense Galerkin restriction of ``op`` to the free dofs ``idx``.

    ``cells`` restricts the cell loop (defaults to all cells touching idx);
    ``matrices`` overrides the per-class element matrices.
    """
    idx = np.asarray(idx, dtype=int)
    n = len(idx)
    out = np.zeros((n, n))
    if n == 0:
        return out
    space = op.space
    if cells is None:
        cells = np.unique(space.cells_of_dof[idx].indices)
    loc = -np.ones(space.n + 1, dtype=int)
    loc[idx] = np.arange(n)
    mats = op.class_matrices if matrices is None else matrices
    for c in cells:
        l = loc[space.cell_dofs[c]]
        m = np.flatnonzero(l >= 0)
        if len(m) == 0:
            continue
        out[np.ix_(l[m], l[m])] += mats[op.cell_class[c]][np.ix_(m, m)]
    return 0.5 * (out + out.T)


# ------------------------------------------------------------ exterior derivative


def reference_derivative(source: ReferenceElement, target: ReferenceElement) -> np.ndarray:
    """Matrix of d: X^k(T) -> X^{k+1}(T) in the two nodal bases.

    Entries are integers: incidence numbers for Whitney forms and the
    identity from type-I (k)-forms onto type-II (k+1)-forms.
    """
    evaluate = source.evaluator()
    k, d = source.tag.k, source.tag.d
    from derham.reference import exterior_derivative

    def dvalues(x):
        vals, jac = evaluate(x)
        dv = exterior_derivative(k, d, jac)
        return dv, np.zeros(dv.shape + (d,))

    mat = target.dofs.apply(dvalues)
    mat[np.abs(mat) < 1e-12] = 0.0
    # top-degree Whitney functionals carry the L2-normalized cell constant,
    # so only rows of other functionals are incidence numbers
    rows = np.ones(len(mat), dtype=bool)
    if target.tag.k == target.tag.d:
        rows[target.whitney] = False
    rounded = np.round(mat[rows])
    err = np.abs(mat[rows] - rounded).max(initial=0.0)
    if err > 1e-8:
        raise ArithmeticError(f"d matrix not integral (deviation {err:.2e})")
    mat[rows] = rounded
    return mat


def derivative_matrix(source: GlobalSpace, target: GlobalSpace) -> sp.csr_matrix:
    """Global incidence matrix of d between two spaces on the same mesh."""
    dhat = reference_derivative(source.element, target.element)
    ii, jj = np.nonzero(dhat)
    rows = target.cell_dofs[:, ii].ravel()
    cols = source.cell_dofs[:, jj].ravel()
    vals = np.tile(dhat[ii, jj], source.mesh.num_cells)
    ok = (rows >= 0) & (cols >= 0)
    key = rows[ok] * (source.n + 1) + cols[ok]
    ukey, first = np.unique(key, return_index=True)
    uv = vals[ok][first]
    # the same pair seen from different cells must agree
    check = sp.coo_matrix((vals[ok], (rows[ok], cols[ok])), shape=(target.n, source.n)).tocsr()
    counts = sp.coo_matrix((np.ones(ok.sum()), (rows[ok], cols[ok])), shape=(target.n, source.n)).tocsr()
    dm = sp.coo_matrix((uv, (ukey // (source.n + 1), ukey % (source.n + 1))),
                       shape=(target.n, source.n)).tocsr()
    if abs(check - dm.multiply(counts)).max() > 1e-12:
        raise ArithmeticError("inconsistent derivative entries across cells")
    return dm


# ------------------------------------------------------------------ Whitney forms


def whitney_restriction(space: GlobalSpace) -> sp.csr_matrix:
    """0/1 embedding of W^k (columns) into the free dofs of ``space``."""
    w = space.whitney
    return sp.csr_matrix((np.ones(len(w)), (w, np.arange(len(w)))), shape=(space.n, len(w)))


def _physical_whitney(k: int, xcell: np.ndarray, sub: tuple, x: np.ndarray) -> np.ndarray:
    d = xcell.shape[1]
    a = np.vstack([xcell.T, np.ones(d + 1)])
    ainv = np.linalg.inv(a)
    lam = (ainv @ np.vstack([x.T, np.ones(len(x))])).T
    glam = ainv[:, :d]
    if k == 0:
        return lam[:, [sub[0]]]
    if k == 1:
        i, j = sub
        return lam[:, [i]] * glam[j] - lam[:, [j]] * glam[i]
    i, j, m = sub
    return 2 * (lam[:, [i]] * np.cross(glam[j], glam[m]) - lam[:, [j]] * np.cross(glam[i], glam[m])
                + lam[:, [m]] * np.cross(glam[i], glam[j]))


def whitney_prolongation(fine: GlobalSpace, coarse: GlobalSpace) -> sp.csr_matrix:
    """Canonical interpolation of coarse Whitney forms onto fine Whitney dofs.

    Returns a matrix mapping coefficients of the coarse W^k (ordered as
    ``coarse.whitney``) to the fine W^k (ordered as ``fine.whitney``).
    """
    fm, cm = fine.mesh, coarse.mesh
    if fm.parent_mesh is not cm:
        raise ValueError("meshes are not nested (fine.parent_mesh must be the coarse mesh)")
    k, d = fine.tag.k, fm.dim
    if k == d:
        raise ValueError("no Whitney transfer for top-degree forms")
    cw_pos = -np.ones(coarse.n, dtype=int)
    cw_pos[coarse.whitney] = np.arange(len(coarse.whitney))
    rows, cols, vals = [], [], []
    done = set()
    subs = reference_simplex(d).subsimplices(k)
    for fpos, fdof in enumerate(fine.whitney):
        fent = int(fine.dof_entity[fdof])
        if fent in done:
            continue
        done.add(fent)
        fverts = fm.entities[k][fent]
        fcell = fm.cells_of(k, fent)[0]
        pc = fm.parent[fcell]
        xs = fm.vertices[fverts]
        xc = cm.vertices[cm.cells[pc]]
        if k == 0:
            pts, tangent = xs, None
        else:
            pts = xs.mean(axis=0, keepdims=True)
            if k == 1:
                tangent = xs[1] - xs[0]
            else:
                tangent = np.cross(xs[1] - xs[0], xs[2] - xs[0]) / 2
        for li, sub in enumerate(subs):
            cent = cm.cell_entities[k][pc, li]
            cdofs = coarse.entity_dofs(k, cent)
            cd = [c for c in cdofs if coarse.dof_kind[c] == 0]
            if not cd:
                continue
            w = _physical_whitney(k, xc, sub, pts)
            val = w[0, 0] if k == 0 else float(w[0] @ tangent)
            if abs(val) > 1e-14:
                rows.append(fpos)
                cols.append(cw_pos[cd[0]])
                vals.append(val)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(fine.whitney), len(coarse.whitney)))


# ------------------------------------------------------------- field evaluation


def evaluate_field(space: GlobalSpace, coef: np.ndarray, cell: int, xhat: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Physical values and exterior derivative of a discrete field on one cell.

    ``xhat`` are reference-cell coordinates; returns arrays of shape
    (npts, ncomp) and (npts, dcomp).
    """
    jac, _ = cell_jacobians(space.mesh)
    j = jac[cell : cell + 1]
    vals, dv = space.element.tabulate(xhat)
    g = space.cell_dofs[cell]
    c = np.where(g >= 0, np.append(coef, 0.0)[np.where(g < 0, space.n, g)], 0.0)
    gv = value_transform(space.tag.pullback, j)[0]
    u = np.einsum("qic,i->qc", vals, c) @ gv.T
    if space.tag.dcomp:
        gd = derivative_transform(space.tag, j)[0]
        du = np.einsum("qic,i->qc", dv, c) @ gd.T
    else:
        du = np.zeros((len(u), 0))
    return u, du


def load_vector(space: GlobalSpace, f) -> np.ndarray:
    """Vector of (f, phi_i) for a constant ``f`` (scalar or component array)."""
    from derham.quadrature import quadrature

    el = space.element
    ref = reference_simplex(space.mesh.dim)
    rule = quadrature(ref.d, 2 * el.tag.p + 2)
    xq = rule.bary @ ref.vertices
    vals, _ = el.tabulate(xq)
    fv = np.broadcast_to(np.asarray(f, dtype=float), (el.tag.ncomp,))
    jac, _ = cell_jacobians(space.mesh)
    gv = value_transform(el.tag.pullback, jac)
    adet = np.abs(np.linalg.det(jac))
    # (f, G phi) = (G^T f) . int phi
    moments = np.einsum("q,qic->ic", rule.weights, vals)
    loc = np.einsum("cmn,m,in->ci", gv, fv, moments) * adet[:, None]
    idx = space.cell_dofs
    out = np.bincount(np.where(idx < 0, space.n, idx).ravel(), weights=loc.ravel(),
                      minlength=space.n + 1)
    return out[: space.n]
