"""Star-patch space decompositions and the hybrid multiplicative Schwarz solver.

Groups are combined as ``z <- z + rho_m^{-1} B_m (r - A z)`` over the
palindromic order ``G_1, ..., G_M, ..., G_1``.  Each patch group is additive;
patches whose matrices coincide (same cell classes and local layout) share a
single Cholesky factor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from derham.assembly import (
    GlobalOperator,
    GlobalSpace,
    assemble_operator,
    derivative_matrix,
    number_dofs,
    whitney_prolongation,
)
from derham.costs import CostLedger, cholesky_flops, solve_flops
from derham.linalg import cholesky, lanczos_extremes, solve
from derham.mesh import SimplicialMesh, star
from derham.reference import SpaceTag

__all__ = [
    "DecompositionSpec",
    "Subspace",
    "Decomposition",
    "PatchGroup",
    "JacobiGroup",
    "ExactGroup",
    "WhitneyMultigrid",
    "MultigridGroup",
    "HybridSchwarz",
    "build_decomposition",
    "build_hybrid",
    "estimate_weights",
    "apply_hybrid",
    "vcycle",
    "potential_patch_solve",
]

log = logging.getLogger(__name__)

DECOMPOSITIONS = ("pafw0", "pafw1", "ph", "ph-typeI")
EPS_FACTOR = 1e-8
WEIGHT_ITERS = 10


@dataclass(frozen=True)
class DecompositionSpec:
    """Which star-patch decomposition to use.

    Parameters
    ----------
    name : {"pafw0", "pafw1", "ph", "ph-typeI"}
        l-star patches over X^k (pafw<l>), or potential (k-1)-star patches
        mapped through d plus k-star patches (ph); ``ph-typeI`` restricts both
        to type-I functions and needs no regularization.
    split : bool
        Restrict patches to interface dofs and add point-Jacobi on cell
        interiors.
    eps_factor : float
        Mass shift of regularized potential patches, relative to beta.
    """

    name: str = "pafw0"
    split: bool = True
    eps_factor: float = EPS_FACTOR

    def __post_init__(self):
        if self.name not in DECOMPOSITIONS:
            raise ValueError(f"unknown decomposition {self.name!r}")

    @property
    def potential(self) -> str | None:
        if self.name == "ph":
            return "regularized"
        if self.name == "ph-typeI":
            return "typeI-reduced"
        return None

    def validate(self, k: int, d: int) -> None:
        if self.name == "pafw1" and not (k == 2 and d == 3):
            raise ValueError("pafw1 is only defined for k=2 in 3D")
        if self.name.startswith("ph") and k < 1:
            raise ValueError("Hiptmair-Toselli decompositions need k >= 1")
        if k == d:
            raise ValueError("top-degree spaces use an exact diagonal solver")

    def label(self) -> str:
        return f"{self.name}{'+J' if self.split else ''}"


@dataclass
class Subspace:
    """One patch: ``indices`` into ``role`` space ("primal" or "potential")."""

    role: str
    seed: tuple
    indices: np.ndarray
    cells: np.ndarray


@dataclass
class Decomposition:
    spec: DecompositionSpec
    space: GlobalSpace
    potential_space: GlobalSpace | None
    patches: list
    interior: np.ndarray
    include_whitney: bool = True

    def max_dims(self) -> dict:
        out: dict = {}
        for s in self.patches:
            key = (s.role, s.seed[0])
            out[key] = max(out.get(key, 0), len(s.indices))
        return out

    def covered(self) -> np.ndarray:
        """Primal dofs reached by some subspace (potential patches through d)."""
        hit = np.zeros(self.space.n, dtype=bool)
        hit[self.interior] = True
        if self.include_whitney:
            hit[self.space.whitney] = True
        dmat = None
        for s in self.patches:
            if s.role == "primal":
                hit[s.indices] = True
            else:
                if dmat is None:
                    dmat = derivative_matrix(self.potential_space, self.space).tocsc()
                hit[dmat[:, s.indices].indices] = True
        return hit


def _dirichlet(mesh: SimplicialMesh) -> dict:
    return {m: mesh.dirichlet_entities(m) for m in range(mesh.dim + 1)}


def _star_patches(space: GlobalSpace, l: int, role: str, keep: np.ndarray) -> list:
    mesh = space.mesh
    bc = _dirichlet(mesh)
    out = []
    for e in range(mesh.num_entities(l)):
        st = star(mesh, (l, e), bc)
        idx = space.dofs_of(st.interior_entities, keep)
        if len(idx):
            out.append(Subspace(role, (l, e), idx, st.cells))
    return out


def _mask(space: GlobalSpace, split: bool, type1: bool) -> np.ndarray:
    m = np.ones(space.n, dtype=bool)
    if split:
        m &= space.dof_dim < space.mesh.dim
    if type1:
        m &= space.dof_kind != 2
    return m


def build_decomposition(spec: DecompositionSpec, space: GlobalSpace,
                        potential_space: GlobalSpace | None = None) -> Decomposition:
    """Index sets of the decomposition ``spec`` on ``space`` (no factorization)."""
    k, d = space.tag.k, space.tag.d
    spec.validate(k, d)
    interior = space.interior if spec.split else np.zeros(0, dtype=int)
    patches: list = []
    if spec.name.startswith("pafw"):
        l = int(spec.name[-1])
        patches = _star_patches(space, l, "primal", _mask(space, spec.split, False))
    else:
        if potential_space is None:
            potential_space = number_dofs(space.mesh, space.tag.companion())
        type1 = spec.name == "ph-typeI"
        patches = _star_patches(potential_space, k - 1, "potential",
                                _mask(potential_space, spec.split, type1))
        patches += _star_patches(space, k, "primal", _mask(space, spec.split, type1))
    return Decomposition(spec, space, potential_space, patches, interior)


# ----------------------------------------------------------------------- groups


class _Group:
    name = "group"
    indices: np.ndarray

    def apply(self, r: np.ndarray) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


class JacobiGroup(_Group):
    """Point-Jacobi on a set of dofs (singleton subspaces)."""

    name = "jacobi"

    def __init__(self, op: GlobalOperator, indices: np.ndarray):
        self.op = op
        self.indices = np.asarray(indices, dtype=int)
        self.inv = 1.0 / op.diagonal()[self.indices]

    def apply(self, r):
        z = np.zeros_like(r)
        z[self.indices] = self.inv * r[self.indices]
        self.op.ledger.add("jacobi", len(self.indices))
        return z


class ExactGroup(_Group):
    """Exact solve on a subspace (desk-scale verification)."""

    name = "exact"

    def __init__(self, op: GlobalOperator, indices: np.ndarray | None = None):
        self.op = op
        self.indices = np.arange(op.n) if indices is None else np.asarray(indices, dtype=int)
        a = op.to_sparse()[self.indices][:, self.indices].toarray()
        self.factor = cholesky(a, "exact group")

    def apply(self, r):
        z = np.zeros_like(r)
        z[self.indices] = solve(self.factor, r[self.indices])
        return z


def _canonical_layout(space: GlobalSpace, op: GlobalOperator, patch: Subspace,
                      centroid: np.ndarray, h: float):
    """Patch dofs in a translation-invariant order plus a hashable signature."""
    mesh = space.mesh
    cc = mesh.vertices[mesh.cells[patch.cells]].mean(axis=1)
    rel = np.round((cc - centroid) / h * 64).astype(np.int64)
    order = np.lexsort(rel.T[::-1])
    cells = patch.cells[order]
    marker = np.zeros(space.n + 1, dtype=bool)
    marker[patch.indices] = True
    pos = {}
    layout = []
    for c in cells:
        g = space.cell_dofs[c]
        loc = np.full(len(g), -1, dtype=np.int64)
        for i in np.flatnonzero(marker[np.where(g < 0, space.n, g)]):
            gi = int(g[i])
            if gi not in pos:
                pos[gi] = len(pos)
            loc[i] = pos[gi]
        layout.append(loc)
    glob = np.empty(len(pos), dtype=np.int64)
    for gi, j in pos.items():
        glob[j] = gi
    sig = (rel[order].tobytes(), op.cell_class[cells].tobytes(),
           b"".join(l.tobytes() for l in layout))
    return glob, cells, layout, sig


class PatchGroup(_Group):
    """Additive exact solves on star patches of one space.

    For potential patches the residual is pulled back with d^T, the patch
    problem is solved in X^{k-1}, and the summed potential is pushed forward
    with d.
    """

    name = "patches"

    def __init__(self, op: GlobalOperator, patches: list, indices: np.ndarray,
                 dmat: sp.csr_matrix | None = None, ledger: CostLedger | None = None,
                 context: str = "patch"):
        self.op = op
        self.n_out = op.n if dmat is None else dmat.shape[0]
        self.indices = np.asarray(indices, dtype=int)
        self.dmat = dmat
        self.dmat_t = None if dmat is None else dmat.T.tocsr()
        self.ledger = ledger if ledger is not None else op.ledger
        self.sizes = np.array([len(p.indices) for p in patches], dtype=np.int64)
        space = op.space
        mesh = space.mesh
        h = float(mesh.diameters.min())
        mats = op.class_matrices
        buckets: dict = {}
        for p in patches:
            seed_c = mesh.vertices[mesh.entities[p.seed[0]][p.seed[1]]].mean(axis=0)
            glob, cells, layout, sig = _canonical_layout(space, op, p, seed_c, h)
            if sig not in buckets:
                a = np.zeros((len(glob), len(glob)))
                for c, loc in zip(cells, layout):
                    m = np.flatnonzero(loc >= 0)
                    a[np.ix_(loc[m], loc[m])] += mats[op.cell_class[c]][np.ix_(m, m)]
                a = 0.5 * (a + a.T)
                buckets[sig] = (cholesky(a, f"{context} at seed {p.seed}"), [])
            buckets[sig][1].append(glob)
        self.blocks = [(f, np.array(g)) for f, g in buckets.values()]
        for m in self.sizes:
            self.ledger.add("patch_factor", cholesky_flops(int(m)))
            self.ledger.store("patch_factors", int(m) * (int(m) + 1) // 2)
        self.unique_factors = len(self.blocks)

    def apply(self, r):
        rr = r if self.dmat_t is None else self.dmat_t @ r
        n = self.op.n
        rr = np.append(rr, 0.0)
        out = np.zeros(n + 1)
        for factor, glob in self.blocks:
            z = solve(factor, rr[glob].T).T
            out += np.bincount(glob.ravel(), weights=z.ravel(), minlength=n + 1)
        self.ledger.add("patch_solve", float(np.sum(2.0 * self.sizes ** 2)))
        z = out[:n]
        return z if self.dmat is None else self.dmat @ z


class SumGroup(_Group):
    """Additive combination of several groups on one subspace."""

    name = "patches"

    def __init__(self, parts: list, indices: np.ndarray):
        self.parts = parts
        self.indices = np.asarray(indices, dtype=int)

    def apply(self, r):
        z = self.parts[0].apply(r)
        for g in self.parts[1:]:
            z = z + g.apply(r)
        return z


def potential_patch_solve(group: PatchGroup, r: np.ndarray) -> np.ndarray:
    """k-form correction d(phi) from the potential patches of ``group``."""
    if group.dmat is None:
        raise ValueError("not a potential patch group")
    return group.apply(r)


def _patch_groups(dec: Decomposition, op: GlobalOperator, level_tag: str = "") -> list:
    spec = dec.spec
    parts = []
    primal = [p for p in dec.patches if p.role == "primal"]
    pot = [p for p in dec.patches if p.role == "potential"]
    if pot:
        beta = op.beta
        reg = spec.eps_factor * beta if (spec.potential == "regularized" and dec.space.tag.k >= 2) else 0.0
        pop = assemble_operator(dec.potential_space, alpha=beta, beta=reg, ledger=op.ledger)
        dmat = derivative_matrix(dec.potential_space, dec.space)
        parts.append(PatchGroup(pop, pot, np.arange(dec.potential_space.n), dmat, op.ledger,
                                f"{level_tag}potential patch"))
    if primal:
        parts.append(PatchGroup(op, primal, np.arange(op.n), None, op.ledger,
                                f"{level_tag}patch"))
    idx = np.flatnonzero(_mask(dec.space, spec.split, False))
    return [SumGroup(parts, idx)] if parts else []


# -------------------------------------------------------------------- multigrid


@dataclass(eq=False)
class WhitneyMultigrid:
    """V-cycle on the lowest-order spaces of a nested mesh hierarchy.

    ``levels[0]`` is the coarsest.  Each finer level is smoothed by the
    lowest-order version of the decomposition (weighted additive patches),
    the coarsest is solved with Cholesky.
    """

    ops: list
    prolongations: list
    smoothers: list
    smoother_weights: list
    coarse_factor: np.ndarray = field(repr=False)
    pre: int = 1
    post: int = 1

    @property
    def nlevels(self) -> int:
        return len(self.ops)


def _hierarchy(mesh: SimplicialMesh) -> list:
    out = [mesh]
    while out[0].parent_mesh is not None:
        out.insert(0, out[0].parent_mesh)
    return out


def build_multigrid(space: GlobalSpace, alpha: float, beta: float, spec: DecompositionSpec,
                    ledger: CostLedger, seed: int = 0, pre: int = 1, post: int = 1,
                    max_levels: int | None = None) -> WhitneyMultigrid:
    tag = space.tag
    low = SpaceTag(tag.k, tag.d, "first", 1, tag.rotated)
    meshes = _hierarchy(space.mesh)
    if max_levels is not None:
        meshes = meshes[-max_levels:]
    spaces = [number_dofs(m, low) for m in meshes]
    ops = [assemble_operator(s, alpha, beta, ledger) for s in spaces]
    prol = [whitney_prolongation(spaces[i], spaces[i - 1]) for i in range(1, len(spaces))]
    smoothers, weights = [], []
    lspec = DecompositionSpec(spec.name, split=False, eps_factor=spec.eps_factor)
    for lvl in range(1, len(spaces)):
        dec = build_decomposition(lspec, spaces[lvl])
        (g,) = _patch_groups(dec, ops[lvl], f"level {lvl} ")
        lo, hi, rho = _estimate(ops[lvl], g, seed + 7919 * lvl)
        smoothers.append(g)
        weights.append(rho)
    coarse = ops[0].to_sparse().toarray()
    ledger.add("coarse_factor", cholesky_flops(len(coarse)))
    ledger.store("coarse_factor", len(coarse) * (len(coarse) + 1) // 2)
    return WhitneyMultigrid(ops, prol, smoothers, weights, cholesky(coarse, "coarse grid"), pre, post)


def vcycle(mg: WhitneyMultigrid, r: np.ndarray, level: int | None = None) -> np.ndarray:
    """One V-cycle for the lowest-order operator on ``level`` (default finest)."""
    lvl = mg.nlevels - 1 if level is None else level
    if lvl == 0:
        return solve(mg.coarse_factor, r)
    a = mg.ops[lvl]
    s, w = mg.smoothers[lvl - 1], mg.smoother_weights[lvl - 1]
    z = np.zeros_like(r)
    for _ in range(mg.pre):
        z += s.apply(r - a.matvec(z)) / w
    p = mg.prolongations[lvl - 1]
    z += p @ vcycle(mg, p.T @ (r - a.matvec(z)), lvl - 1)
    for _ in range(mg.post):
        z += s.apply(r - a.matvec(z)) / w
    return z


class MultigridGroup(_Group):
    """Whitney subspace W^k solved inexactly by one V-cycle."""

    name = "whitney-mg"

    def __init__(self, space: GlobalSpace, mg: WhitneyMultigrid):
        self.indices = space.whitney
        self.mg = mg
        if mg.ops[-1].n != len(self.indices):
            raise ValueError("Whitney space size mismatch")

    def apply(self, r):
        z = np.zeros_like(r)
        z[self.indices] = vcycle(self.mg, r[self.indices])
        return z


# ----------------------------------------------------------------- hybrid sweep


def _estimate(op: GlobalOperator, group: _Group, seed: int) -> tuple[float, float, float]:
    idx = group.indices
    n = op.n

    def embed(x):
        y = np.zeros(n)
        y[idx] = x
        return y

    lo, hi, rho = lanczos_extremes(lambda x: op.matvec(embed(x))[idx],
                                   lambda x: group.apply(embed(x))[idx],
                                   len(idx), iters=WEIGHT_ITERS, seed=seed)
    if not (lo > 0 and rho > 0):
        log.warning("nonpositive eigenvalue estimate for group %s; using weight 1", group.name)
        return lo, hi, 1.0
    return lo, hi, rho


@dataclass(eq=False)
class HybridSchwarz:
    """Weighted symmetric multiplicative combination of subspace solvers."""

    op: GlobalOperator
    groups: list
    weights: list = field(default_factory=list)
    extremes: list = field(default_factory=list)

    @property
    def sweep(self) -> list:
        m = len(self.groups)
        return list(range(m)) + list(range(m - 2, -1, -1))

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return apply_hybrid(self, r)


def estimate_weights(hs: HybridSchwarz, seed: int = 0) -> list:
    """Set rho_m = (lam_min + 3 lam_max)/4 for each group from 10 Lanczos steps."""
    hs.weights, hs.extremes = [], []
    for m, g in enumerate(hs.groups):
        lo, hi, rho = _estimate(hs.op, g, seed + 104729 * m)
        hs.extremes.append((lo, hi))
        hs.weights.append(rho)
    return hs.weights


def apply_hybrid(hs: HybridSchwarz, r: np.ndarray) -> np.ndarray:
    if len(hs.weights) != len(hs.groups):
        raise ValueError("weights not computed")
    z = np.zeros_like(r)
    fresh = True
    for m in hs.sweep:
        res = r if fresh else r - hs.op.matvec(z)
        z += hs.groups[m].apply(res) / hs.weights[m]
        fresh = False
    return z


def build_hybrid(space: GlobalSpace, op: GlobalOperator, spec: DecompositionSpec,
                 seed: int = 0, coarse: bool = True, smoothing: tuple[int, int] = (1, 1)
                 ) -> tuple[HybridSchwarz, Decomposition]:
    """Groups [interior Jacobi (split only), patches, Whitney V-cycle] with weights."""
    dec = build_decomposition(spec, space)
    groups: list = []
    if spec.split and len(dec.interior):
        groups.append(JacobiGroup(op, dec.interior))
    groups += _patch_groups(dec, op)
    if coarse:
        mg = build_multigrid(space, op.alpha, op.beta, spec, op.ledger, seed,
                             pre=smoothing[0], post=smoothing[1])
        groups.append(MultigridGroup(space, mg))
    dec.include_whitney = coarse
    hs = HybridSchwarz(op, groups)
    estimate_weights(hs, seed)
    return hs, dec
