"""Dense kernels and Krylov drivers.

All Krylov drivers measure convergence in the preconditioned residual norm
``sqrt(r^T P r)`` relative to its initial value (``RESIDUAL_CONVENTION``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

__all__ = [
    "RESIDUAL_CONVENTION",
    "DenseSym",
    "SparseSym",
    "KrylovReport",
    "NotSPDError",
    "sym_gen_eig",
    "cholesky",
    "solve",
    "pcg",
    "minres",
    "lanczos_extremes",
]

RESIDUAL_CONVENTION = "preconditioned-residual-norm"

Apply = Callable[[np.ndarray], np.ndarray]


class NotSPDError(np.linalg.LinAlgError):
    """Raised when a factorization meets a nonpositive pivot."""

    def __init__(self, pivot: int, context: str = ""):
        self.pivot = pivot
        where = f" in {context}" if context else ""
        super().__init__(f"matrix is not SPD{where}: nonpositive pivot at index {pivot}")


def DenseSym(a, tol: float = 1e-12) -> np.ndarray:
    """Validate and symmetrize a dense matrix."""
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    scale = np.abs(a).sum(axis=1).max() if a.size else 0.0
    if a.size and np.abs(a - a.T).sum(axis=1).max() > tol * max(scale, 1e-300):
        raise ValueError("matrix is not symmetric")
    return 0.5 * (a + a.T)


def SparseSym(a):
    """CSR copy with sorted indices after a structural symmetry check."""
    import scipy.sparse as sp

    m = sp.csr_matrix(a, dtype=float)
    m.sum_duplicates()
    m.sort_indices()
    pattern = (m != 0).astype(np.int8)
    if (pattern - pattern.T).count_nonzero():
        raise ValueError("matrix is not structurally symmetric")
    return m


@dataclass
class KrylovReport:
    iterations: int
    residual: float
    converged: bool
    history: list = field(default_factory=list)
    convention: str = RESIDUAL_CONVENTION


def cholesky(a: np.ndarray, context: str = "") -> np.ndarray:
    """Upper Cholesky factor; raises :class:`NotSPDError` with the pivot index."""
    a = np.asarray(a, dtype=float)
    if a.shape == (0, 0):
        return a.copy()
    c, info = sla.lapack.dpotrf(a, lower=0, clean=1, overwrite_a=0)
    if info > 0:
        raise NotSPDError(info - 1, context)
    if info < 0:
        raise ValueError("invalid argument to dpotrf")
    return c


def solve(factor: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve with an upper Cholesky factor (columns of ``b`` are right-hand sides)."""
    if factor.shape[0] == 0:
        return np.zeros_like(b, dtype=float)
    x, info = sla.lapack.dpotrs(factor, b, lower=0)
    if info:
        raise ValueError("dpotrs failed")
    return x


def sym_gen_eig(a: np.ndarray, b: np.ndarray | None = None, context: str = ""
                ) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of A v = theta B v, ascending, with V^T B V = I."""
    a = DenseSym(a, tol=1e-10)
    if b is None:
        return sla.eigh(a)
    b = DenseSym(b, tol=1e-10)
    u = cholesky(b, context)
    # reduce to a standard problem so the B-orthonormality is explicit
    w = sla.solve_triangular(u, sla.solve_triangular(u, a, trans="T").T, trans="T").T
    theta, z = sla.eigh(0.5 * (w + w.T))
    v = sla.solve_triangular(u, z)
    return theta, v


def _identity(x):
    return x


def pcg(apply_a: Apply, apply_p: Apply | None, b: np.ndarray, rtol: float = 1e-8,
        maxit: int = 1000, x0: np.ndarray | None = None, callback=None
        ) -> tuple[np.ndarray, KrylovReport]:
    """Preconditioned conjugate gradients.

    Returns the iterate and a report whose residuals are
    ``sqrt(r^T P r) / sqrt(r0^T P r0)``.  ``callback(alpha, beta)`` receives
    the CG coefficients of every step (used for Lanczos estimates).
    """
    apply_p = apply_p or _identity
    x = np.zeros_like(b, dtype=float) if x0 is None else np.array(x0, dtype=float)
    r = b - apply_a(x) if x0 is not None else np.array(b, dtype=float)
    z = apply_p(r)
    rz = float(r @ z)
    if rz < 0:
        raise NotSPDError(-1, "preconditioner")
    r0 = np.sqrt(rz)
    hist = [1.0]
    if r0 == 0.0:
        return x, KrylovReport(0, 0.0, True, hist)
    p = z.copy()
    for it in range(1, maxit + 1):
        q = apply_a(p)
        pq = float(p @ q)
        if pq <= 0:
            return x, KrylovReport(it - 1, hist[-1], False, hist)
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        z = apply_p(r)
        rz_new = float(r @ z)
        rel = np.sqrt(max(rz_new, 0.0)) / r0
        hist.append(rel)
        beta = rz_new / rz
        if callback is not None:
            callback(alpha, beta)
        if rel <= rtol:
            return x, KrylovReport(it, rel, True, hist)
        rz = rz_new
        p = z + beta * p
    return x, KrylovReport(maxit, hist[-1], False, hist)


def minres(apply_a: Apply, apply_p: Apply | None, b: np.ndarray, rtol: float = 1e-8,
           maxit: int = 1000) -> tuple[np.ndarray, KrylovReport]:
    """Preconditioned MINRES for symmetric (indefinite) A and SPD P.

    The residual estimate is the P-norm of the residual, relative to the
    initial one.
    """
    apply_p = apply_p or _identity
    n = len(b)
    x = np.zeros(n)
    r1 = np.array(b, dtype=float)
    y = apply_p(r1)
    beta1 = float(r1 @ y)
    if beta1 < 0:
        raise NotSPDError(-1, "preconditioner")
    hist = [1.0]
    if beta1 == 0:
        return x, KrylovReport(0, 0.0, True, hist)
    beta1 = np.sqrt(beta1)
    oldb, beta = 0.0, beta1
    r2 = r1.copy()
    dbar = epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    for it in range(1, maxit + 1):
        v = y / beta
        y = apply_a(v)
        if it >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = apply_p(r2)
        oldb = beta
        beta = float(r2 @ y)
        if beta < 0:
            raise NotSPDError(-1, "preconditioner")
        beta = np.sqrt(beta)
        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), np.finfo(float).tiny)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar
        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        rel = abs(phibar) / beta1
        hist.append(rel)
        if rel <= rtol:
            return x, KrylovReport(it, rel, True, hist)
        if beta == 0.0:
            return x, KrylovReport(it, rel, rel <= rtol, hist)
    return x, KrylovReport(maxit, hist[-1], False, hist)


def lanczos_extremes(apply_a: Apply, apply_p: Apply | None, n: int, iters: int = 10,
                     seed: int = 0) -> tuple[float, float, float]:
    """Extreme Ritz values of P A from ``iters`` CG steps on a random rhs.

    Returns ``(lam_min, lam_max, rho)`` with ``rho = (lam_min + 3 lam_max) / 4``.
    """
    rng = np.random.default_rng(seed)
    b = rng.standard_normal(n)
    alphas, betas = [], []
    pcg(apply_a, apply_p, b, rtol=0.0, maxit=iters,
        callback=lambda a, bt: (alphas.append(a), betas.append(bt)))
    m = len(alphas)
    if m == 0:
        return 1.0, 1.0, 1.0
    diag = np.empty(m)
    off = np.empty(max(m - 1, 0))
    for j in range(m):
        diag[j] = 1.0 / alphas[j] + (betas[j - 1] / alphas[j - 1] if j else 0.0)
        if j < m - 1:
            off[j] = np.sqrt(max(betas[j], 0.0)) / alphas[j]
    theta = sla.eigh_tridiagonal(diag, off, eigvals_only=True)
    lo, hi = float(theta[0]), float(theta[-1])
    return lo, hi, (lo + 3.0 * hi) / 4.0
