"""Mixed Hodge Laplacians with weighted Riesz-map block preconditioners."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from derham.assembly import (
    GlobalOperator,
    GlobalSpace,
    assemble_operator,
    derivative_matrix,
    load_vector,
    number_dofs,
)
from derham.costs import CostLedger
from derham.linalg import KrylovReport, minres, sym_gen_eig
from derham.mesh import SimplicialMesh
from derham.reference import SpaceTag
from derham.schwarz import DecompositionSpec, build_hybrid

__all__ = [
    "HodgeSystem",
    "BlockRieszPreconditioner",
    "EigenReport",
    "hodge_tags",
    "recommended_spec",
    "assemble_hodge",
    "solve_hodge",
    "harmonic_dimension",
    "classify_eigenvalues",
]

ZERO_TOL = 1e-9


def hodge_tags(k: int, d: int, p: int) -> tuple[SpaceTag, SpaceTag]:
    """First-kind pair (X^{k-1}, X^k)."""
    if not 1 <= k <= d:
        raise ValueError("need 1 <= k <= d")
    lo = SpaceTag(k - 1, d, "first", p)
    hi = SpaceTag(k, d, "first", p - 1 if k == d else p)
    return lo, hi


def recommended_spec(tag: SpaceTag, split: bool = True) -> DecompositionSpec | None:
    """Decomposition used for each Riesz block (None means diagonal solve)."""
    if tag.k == tag.d:
        return None
    if tag.k == 0:
        return DecompositionSpec("pafw0", split)
    if tag.k == 1:
        return DecompositionSpec("ph-typeI", split)
    return DecompositionSpec("pafw1", split)


@dataclass(eq=False)
class HodgeSystem:
    """Blocks of [[-M, B^T], [B, K]] with B = M_k D."""

    k: int
    sigma_space: GlobalSpace
    u_space: GlobalSpace
    mass_sigma: GlobalOperator
    mass_u: GlobalOperator
    stiff_u: GlobalOperator | None
    dmat: sp.csr_matrix
    rhs: np.ndarray

    @property
    def sizes(self) -> tuple[int, int]:
        return self.sigma_space.n, self.u_space.n

    def matvec(self, x: np.ndarray) -> np.ndarray:
        ns = self.sigma_space.n
        s, u = x[:ns], x[ns:]
        mu = self.mass_u.matvec(u)
        ys = -self.mass_sigma.matvec(s) + self.dmat.T @ mu
        yu = self.mass_u.matvec(self.dmat @ s)
        if self.stiff_u is not None:
            yu = yu + self.stiff_u.matvec(u)
        return np.concatenate([ys, yu])

    __call__ = matvec

    def dense(self) -> np.ndarray:
        ms = self.mass_sigma.to_sparse().toarray()
        mu = self.mass_u.to_sparse().toarray()
        ku = self.stiff_u.to_sparse().toarray() if self.stiff_u is not None else np.zeros_like(mu)
        b = mu @ self.dmat.toarray()
        return np.block([[-ms, b.T], [b, ku]])


class _DirectSolver:
    def __init__(self, op: GlobalOperator):
        self.lu = spla.splu(op.to_sparse().tocsc())

    def __call__(self, r):
        return self.lu.solve(r)


class _DiagonalSolver:
    def __init__(self, op: GlobalOperator):
        self.inv = 1.0 / op.diagonal()

    def __call__(self, r):
        return self.inv * r


@dataclass(eq=False)
class BlockRieszPreconditioner:
    """blockdiag(S_sigma, S_u) approximating the inverses of the weighted Riesz maps."""

    gamma: float
    sigma_op: GlobalOperator
    u_op: GlobalOperator
    sigma_solver: object
    u_solver: object

    def __call__(self, r: np.ndarray) -> np.ndarray:
        ns = self.sigma_op.n
        return np.concatenate([self.sigma_solver(r[:ns]), self.u_solver(r[ns:])])


def _block_solver(space: GlobalSpace, op: GlobalOperator, mode: str, split: bool, seed: int):
    if mode == "none":
        return None
    if space.tag.k == space.tag.d:
        return _DiagonalSolver(op)
    if mode == "exact":
        return _DirectSolver(op)
    hs, _ = build_hybrid(space, op, recommended_spec(space.tag, split), seed=seed)
    return hs


def assemble_hodge(k: int, mesh: SimplicialMesh, p: int, gamma: float = 1.0,
                   solver: str = "exact", split: bool = True, seed: int = 0,
                   ledger: CostLedger | None = None
                   ) -> tuple[HodgeSystem, BlockRieszPreconditioner]:
    """Hodge Laplacian on X^{k-1} x X^k with rhs f = 1 (all components).

    ``solver`` is "exact" (sparse direct block solves) or "schwarz" (hybrid
    Schwarz with the recommended decompositions).
    """
    ledger = ledger if ledger is not None else CostLedger()
    lo, hi = hodge_tags(k, mesh.dim, p)
    ss = number_dofs(mesh, lo)
    us = number_dofs(mesh, hi)
    ms = assemble_operator(ss, 0.0, 1.0, ledger)
    mu = assemble_operator(us, 0.0, 1.0, ledger)
    ku = assemble_operator(us, 1.0, 0.0, ledger) if k < mesh.dim else None
    dmat = derivative_matrix(ss, us)
    f = load_vector(us, np.ones(hi.ncomp))
    system = HodgeSystem(k, ss, us, ms, mu, ku, dmat, np.concatenate([np.zeros(ss.n), f]))
    pso = assemble_operator(ss, gamma, 1.0, ledger)
    puo = assemble_operator(us, 1.0, 1.0 / gamma, ledger)
    prec = BlockRieszPreconditioner(
        gamma, pso, puo,
        _block_solver(ss, pso, solver, split, seed),
        _block_solver(us, puo, solver, split, seed + 1),
    )
    return system, prec


def solve_hodge(system: HodgeSystem, prec: BlockRieszPreconditioner, rtol: float = 1e-8,
                maxit: int = 500) -> tuple[np.ndarray, np.ndarray, KrylovReport]:
    x, rep = minres(system.matvec, prec, system.rhs, rtol=rtol, maxit=maxit)
    ns = system.sigma_space.n
    return x[:ns], x[ns:], rep


# ---------------------------------------------------------- eigen classification


def _positive_gen_eigs(k_mat: np.ndarray, m_mat: np.ndarray) -> np.ndarray:
    theta, _ = sym_gen_eig(k_mat, m_mat)
    scale = max(abs(theta).max(initial=0.0), 1.0)
    return theta[theta > ZERO_TOL * scale]


def harmonic_dimension(system: HodgeSystem) -> int:
    """dim ker(d^k) - rank(d^{k-1}) on X^k, computed densely."""
    mu = system.mass_u.to_sparse().toarray()
    n = len(mu)
    if system.stiff_u is None:
        ker = n
    else:
        ku = system.stiff_u.to_sparse().toarray()
        ker = n - len(_positive_gen_eigs(ku, mu))
    rank = np.linalg.matrix_rank(system.dmat.toarray(), tol=1e-9)
    return int(ker - rank)


@dataclass
class EigenReport:
    passed: bool
    computed: np.ndarray = field(repr=False)
    predicted: np.ndarray = field(repr=False)
    max_rel_error: float
    n_minus_one: int
    nu_min: float
    mu_min: float | None
    harmonic_dim: int
    unmatched: list = field(default_factory=list)


def classify_eigenvalues(k: int, mesh: SimplicialMesh, p: int, gamma: float,
                         tol: float = 1e-8) -> EigenReport:
    """Compare the spectrum of A against B_gamma with the predicted classification."""
    system, _ = assemble_hodge(k, mesh, p, gamma, solver="none")
    ms = system.mass_sigma.to_sparse().toarray()
    mu = system.mass_u.to_sparse().toarray()
    ku = system.stiff_u.to_sparse().toarray() if system.stiff_u is not None else np.zeros_like(mu)
    dm = system.dmat.toarray()
    ks = dm.T @ mu @ dm
    ns, nu = len(ms), len(mu)
    hdim = harmonic_dimension(system)
    a = system.dense()
    if hdim:
        # discrete harmonic forms: M-orthonormal basis of ker(d^k) minus range(d^{k-1})
        _, vecs = sym_gen_eig(ku, mu)
        th = _positive_gen_eigs(ku, mu)
        kern = vecs[:, : nu - len(th)]
        img = mu @ dm
        c = kern.T @ img
        h = kern @ sla.null_space(c.T, rcond=1e-9)
        h = h @ np.linalg.inv(np.linalg.cholesky(h.T @ mu @ h).T)
        proj = mu @ h
        bu = (mu - proj @ proj.T) / gamma + proj @ proj.T + ku
        a = np.block([[a, np.vstack([np.zeros((ns, hdim)), mu @ h])],
                      [np.hstack([np.zeros((hdim, ns)), (mu @ h).T]), np.zeros((hdim, hdim))]])
        b = sla.block_diag(ms + gamma * ks, bu, np.eye(hdim))
    else:
        b = sla.block_diag(ms + gamma * ks, mu / gamma + ku)
    computed, _ = sym_gen_eig(a, b, "Hodge preconditioner")
    nus = _positive_gen_eigs(ks, ms)
    mus = _positive_gen_eigs(ku, mu) if system.stiff_u is not None else np.zeros(0)
    predicted = np.sort(np.concatenate([
        -np.ones(ns),
        np.repeat([-1.0, 1.0], hdim),
        mus * gamma / (mus * gamma + 1),
        nus * gamma / (nus * gamma + 1),
    ]))
    unmatched = []
    if len(predicted) != len(computed):
        err = np.inf
    else:
        rel = np.abs(computed - predicted) / np.maximum(np.abs(predicted), 1e-300)
        err = float(rel.max(initial=0.0))
        unmatched = [(float(c), float(q)) for c, q, r in zip(computed, predicted, rel) if r > tol]
    return EigenReport(
        passed=bool(err <= tol),
        computed=computed,
        predicted=predicted,
        max_rel_error=err,
        n_minus_one=int(np.sum(np.abs(computed + 1) <= tol)),
        nu_min=float(nus.min(initial=np.inf)),
        mu_min=float(mus.min()) if len(mus) else None,
        harmonic_dim=hdim,
        unmatched=unmatched,
    )
