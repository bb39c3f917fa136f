"""Reference elements of the L2 de Rham complex with eigen-bubble degrees of freedom.

Forms are represented by proxy fields on the reference simplex: scalars for
k = 0 and k = d, vectors for the intermediate degrees.  Every space is handled
as a subspace of vector polynomials P_p^m spanned by an L2-orthonormal modal
basis; traces onto subsimplices are expressed in the orthonormal tangent frame
of the subsimplex.
"""

from __future__ import annotations

import math
import os
import pickle
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from derham.polynomials import poly_dim, scalar_basis
from derham.quadrature import QuadratureRule, quadrature
from derham.simplex import gram_schmidt_frame, reference_simplex

__all__ = [
    "SpaceTag",
    "ModalSpan",
    "EigenBubbleBasis",
    "DofTag",
    "DofSet",
    "ReferenceElement",
    "modal_span",
    "bubble_eigenbasis",
    "build_dofs",
    "dual_basis",
    "reference_element",
    "reference_matrices",
    "decoupling_constant",
    "trace_forms",
    "exterior_derivative",
    "whitney_form",
    "CACHE_ENV",
]

CACHE_ENV = "DERHAM_ELEMENT_CACHE"

ZERO_MODE_TOL = 1e-8
NULLSPACE_TOL = 1e-10
CLUSTER_TOL = 1e-9
TIEBREAK_SEED = 20240917


# --------------------------------------------------------------------------- tags


@dataclass(frozen=True)
class SpaceTag:
    """Identifies a finite element space X^k(T) of the de Rham complex.

    Parameters
    ----------
    k : int
        Form degree, 0 <= k <= d.
    d : int
        Spatial dimension (2 or 3).
    kind : {"first", "second"}
        Family; for k = 0 and k = d the spaces coincide but the companion
        used for type-II functions differs.
    p : int
        Polynomial degree: CG_p, Ned_p, RT_p, BDM_p and DG_p = P_p.
    rotated : bool
        Two-dimensional H(div) variant of k = 1 (RT/BDM in 2D), obtained by a
        quarter-turn rotation of the H(curl) element.
    """

    k: int
    d: int
    kind: str = "first"
    p: int = 1
    rotated: bool = False

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.d}")
        if not 0 <= self.k <= self.d:
            raise ValueError(f"form degree {self.k} out of range for d={self.d}")
        if self.kind not in ("first", "second"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.p < (0 if self.k == self.d else 1):
            raise ValueError(f"degree {self.p} too small")
        if self.rotated and not (self.d == 2 and self.k == 1):
            raise ValueError("rotation only applies to 2D 1-forms")

    @property
    def name(self) -> str:
        if self.k == 0:
            return "CG"
        if self.k == self.d:
            return "DG"
        if self.k == 1 and not self.rotated:
            return "Ned1" if self.kind == "first" else "Ned2"
        return "RT" if self.kind == "first" else "BDM"

    @property
    def unrotated(self) -> "SpaceTag":
        return SpaceTag(self.k, self.d, self.kind, self.p) if self.rotated else self

    @property
    def ncomp(self) -> int:
        return 1 if self.k in (0, self.d) else self.d

    @property
    def dcomp(self) -> int:
        """Number of proxy components of the exterior derivative."""
        return derivative_components(self.k, self.d)

    @property
    def pullback(self) -> str:
        """One of 'grad', 'curl', 'div', 'l2' (covariance class of the values)."""
        if self.k == 0:
            return "grad"
        if self.k == self.d:
            return "l2"
        if self.k == 1 and not self.rotated:
            return "curl"
        return "div"

    @property
    def dim(self) -> int:
        k, d, p = self.k, self.d, self.p
        if k in (0, d):
            return poly_dim(d, p)
        if self.kind == "second":
            return d * poly_dim(d, p)
        if d == 2:
            return p * (p + 2)
        if k == 1:
            return p * (p + 2) * (p + 3) // 2
        return p * (p + 1) * (p + 3) // 2

    def companion(self) -> "SpaceTag | None":
        """The (k-1)-form space whose bubbles define the type-II functionals.

        It is the predecessor of this space in its complex, so that d maps
        type-I (k-1)-forms onto type-II k-forms.
        """
        k, d, p = self.k, self.d, self.p
        if k == 0:
            return None
        if k == d:
            return SpaceTag(k - 1, d, self.kind, p + 1)
        if self.kind == "first":
            return SpaceTag(k - 1, d, "first", p)
        return SpaceTag(k - 1, d, "second", p + 1)


def derivative_components(k: int, d: int) -> int:
    if k == d:
        return 0
    if k == 0:
        return d
    if k == 1 and d == 3:
        return 3
    return 1


# ------------------------------------------------------------------ form calculus


def exterior_derivative(k: int, d: int, jac: np.ndarray) -> np.ndarray:
    """Proxy of d^k from the Jacobian ``jac[..., i, j] = d v_i / d x_j``."""
    if k == d:
        return np.zeros(jac.shape[:-2] + (0,))
    if k == 0:
        return jac[..., 0, :]
    if k == 1 and d == 2:
        return (jac[..., 1, 0] - jac[..., 0, 1])[..., None]
    if k == 1:
        return np.stack(
            [
                jac[..., 2, 1] - jac[..., 1, 2],
                jac[..., 0, 2] - jac[..., 2, 0],
                jac[..., 1, 0] - jac[..., 0, 1],
            ],
            axis=-1,
        )
    return np.trace(jac, axis1=-2, axis2=-1)[..., None]


def trace_forms(k: int, d: int, vals: np.ndarray, jac: np.ndarray, frame: np.ndarray):
    """Trace of k-forms and of their exterior derivative on a subsimplex.

    Parameters
    ----------
    vals : ndarray (..., ncomp)
    jac : ndarray (..., ncomp, d)
    frame : ndarray (d, l)
        Orthonormal tangent frame; the identity when l = d.

    Returns
    -------
    tr, dtr : ndarrays (..., ntr), (..., ndtr)
        Components in the intrinsic frame of the subsimplex.
    """
    l = frame.shape[1]
    if l == d:
        return vals, exterior_derivative(k, d, jac)
    if k == 0:
        return vals, jac[..., 0, :] @ frame
    if k == 1:
        tr = vals @ frame
        if l == 1:
            return tr, np.zeros(tr.shape[:-1] + (0,))
        # l == 2 < d == 3
        jt = jac @ frame
        t1, t2 = frame[:, 0], frame[:, 1]
        rot = np.einsum("...i,i->...", jt[..., 0], t2) - np.einsum("...i,i->...", jt[..., 1], t1)
        return tr, rot[..., None]
    # k == 2, d == 3, l == 2
    normal = np.cross(frame[:, 0], frame[:, 1])
    return (vals @ normal)[..., None], np.zeros(vals.shape[:-1] + (0,))


def trace_components(k: int, l: int, d: int) -> int:
    if k == 0 or k == l:
        return 1
    return l


def whitney_form(d: int, k: int, sub: tuple[int, ...], x: np.ndarray) -> np.ndarray:
    """Analytic Whitney form of a reference subsimplex from barycentric coordinates.

    Returns proxy values of shape (npts, ncomp).
    """
    ref = reference_simplex(d)
    lam = ref.barycentric(x)
    glam = ref.barycentric_gradients()
    if k == 0:
        return lam[:, [sub[0]]]
    if k == d:
        return np.full((len(lam), 1), 1.0 / ref.volume)
    if k == 1:
        a, b = sub
        return lam[:, [a]] * glam[b] - lam[:, [b]] * glam[a]
    a, b, c = sub
    return 2 * (
        lam[:, [a]] * np.cross(glam[b], glam[c])
        - lam[:, [b]] * np.cross(glam[a], glam[c])
        + lam[:, [c]] * np.cross(glam[a], glam[b])
    )


# -------------------------------------------------------------------- modal span


@dataclass(frozen=True)
class ModalSpan:
    """L2-orthonormal basis of X^k(T) as coefficients over P_p^m.

    Attributes
    ----------
    coeffs : ndarray (ncomp * ns, dim)
        Column j holds the coefficients of the j-th modal function; the scalar
        orthonormal basis is repeated per component.
    """

    tag: SpaceTag
    coeffs: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]

    def evaluate(self, x: np.ndarray, coef: np.ndarray | None = None):
        """Values (npts, ncol, ncomp) and Jacobians (npts, ncol, ncomp, d)."""
        tag = self.tag
        basis = scalar_basis(tag.d, tag.p)
        sv, sg = basis.tabulate(x)
        full = self.coeffs if coef is None else self.coeffs @ coef
        ncol = full.shape[1]
        full = full.reshape(tag.ncomp, basis.size, ncol)
        vals = np.einsum("qs,csn->qnc", sv, full, optimize=True)
        jac = np.einsum("qsj,csn->qncj", sg, full, optimize=True)
        return vals, jac


def _spanning_functions(tag: SpaceTag, x: np.ndarray) -> np.ndarray:
    """Values (npts, nspan, ncomp) of a spanning set of X^k(T)."""
    d, p = tag.d, tag.p
    if tag.k in (0, d):
        vals, _ = scalar_basis(d, p).tabulate(x)
        return vals[:, :, None]
    if tag.kind == "second":
        vals, _ = scalar_basis(d, p).tabulate(x)
        return _vector_products(vals, d)
    vals, _ = scalar_basis(d, p).tabulate(x)
    low = vals[:, : poly_dim(d, p - 1)]
    parts = [_vector_products(low, d)]
    if d == 2:
        perp = np.column_stack([-x[:, 1], x[:, 0]])
        parts.append(low[:, :, None] * perp[:, None, :])
    elif tag.k == 1:
        vec = _vector_products(low, d)
        parts.append(np.cross(vec, x[:, None, :]))
    else:
        parts.append(low[:, :, None] * x[:, None, :])
    return np.concatenate(parts, axis=1)


def _vector_products(scal: np.ndarray, d: int) -> np.ndarray:
    npts, ns = scal.shape
    out = np.zeros((npts, d * ns, d))
    for c in range(d):
        out[:, c * ns : (c + 1) * ns, c] = scal
    return out


@lru_cache(maxsize=None)
def modal_span(tag: SpaceTag) -> ModalSpan:
    """Orthonormal modal basis of X^k(T) for ``tag`` (rotation ignored).

    Examples
    --------
    >>> modal_span(SpaceTag(0, 3, "first", 4)).dim
    35
    """
    tag = tag.unrotated
    d, p = tag.d, tag.p
    basis = scalar_basis(d, p)
    ns = basis.size
    if tag.k in (0, d) or tag.kind == "second":
        coeffs = np.eye(tag.ncomp * ns)
    else:
        ref = reference_simplex(d)
        rule = quadrature(d, 2 * p + 2)
        x = rule.bary @ ref.vertices
        sv, _ = basis.tabulate(x)
        f = _spanning_functions(tag, x)
        proj = np.einsum("qs,qfc->csf", sv * rule.weights[:, None], f, optimize=True)
        proj = proj.reshape(tag.ncomp * ns, -1)
        u, s, _ = sla.svd(proj, full_matrices=False, lapack_driver="gesvd")
        r = tag.dim
        if s[r - 1] < 1e-8 * s[0] or (len(s) > r and s[r] > NULLSPACE_TOL * s[0]):
            raise ArithmeticError(f"rank deficiency in the modal span of {tag}")
        coeffs = u[:, :r]
    if coeffs.shape[1] != tag.dim:
        raise ArithmeticError(f"modal span of {tag} has wrong dimension")
    coeffs.setflags(write=False)
    return ModalSpan(tag, coeffs)


# ------------------------------------------------------------- eigen-bubble basis


@dataclass(frozen=True)
class EigenBubbleBasis:
    """Eigenfunctions of the bubble space on the canonical l-subsimplex.

    Attributes
    ----------
    tag : SpaceTag
    l : int
        Dimension of the subsimplex (k+1 <= l <= d).
    psi : ndarray (dim X^k(T), N)
        Coefficients, over the modal span, of extensions of the eigenfunctions
        to the whole reference simplex; only their traces are meaningful.
    lam : ndarray (N,)
        lam_j = ||psi_j||^2 on S, with ||d_S psi_j|| = 1; decreasing order.
    mu : ndarray
        Full spectrum of the augmented problem (ascending), zero modes included.
    n_kernel : int
        Number of zero modes, i.e. the dimension of d_S of the (k-1)-bubbles.
    """

    tag: SpaceTag
    l: int
    psi: np.ndarray = field(repr=False)
    lam: np.ndarray
    mu: np.ndarray = field(repr=False)
    n_kernel: int

    @property
    def size(self) -> int:
        return self.psi.shape[1]

    @property
    def bubble_dim(self) -> int:
        return len(self.mu)

    def intrinsic(self, rule: QuadratureRule):
        """Trace values and surface derivatives at canonical points of ``rule``.

        Returns arrays of shapes (nq, N, ntr) and (nq, N, ndtr).
        """
        ref = reference_simplex(self.tag.d)
        sub = ref.canonical(self.l)
        x = ref.points(sub, rule.bary)
        vals, jac = modal_span(self.tag).evaluate(x, self.psi)
        return trace_forms(self.tag.k, self.tag.d, vals, jac, ref.frame(sub))


def _facet_constraints(tag: SpaceTag, sub: tuple[int, ...]) -> np.ndarray:
    ref = reference_simplex(tag.d)
    span = modal_span(tag)
    rows = []
    for drop in range(len(sub)):
        facet = sub[:drop] + sub[drop + 1 :]
        rule = quadrature(len(facet) - 1, 2 * tag.p)
        x = ref.points(facet, rule.bary)
        vals, jac = span.evaluate(x)
        tr, _ = trace_forms(tag.k, tag.d, vals, jac, ref.frame(facet))
        tr = tr * np.sqrt(rule.weights)[:, None, None]
        rows.append(tr.transpose(0, 2, 1).reshape(-1, span.dim))
    return np.vstack(rows)


def _column_space(a: np.ndarray, tol: float):
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if len(s) == 0:
        return u[:, :0], s[:0], vt[:0]
    # modal functions are O(1), so an identically vanishing trace is caught too
    r = int(np.sum(s > tol * max(s[0], 1.0)))
    return u[:, :r], s[:r], vt[:r]


def _nullspace(a: np.ndarray, tol: float) -> np.ndarray:
    if a.shape[0] == 0:
        return np.eye(a.shape[1])
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    r = int(np.sum(s > tol * max(s[0], 1.0))) if len(s) else 0
    return vt[r:].T


@lru_cache(maxsize=None)
def bubble_eigenbasis(tag: SpaceTag, l: int) -> EigenBubbleBasis:
    """Solve the augmented bubble eigenproblem on the canonical l-subsimplex.

    The bubble space is the set of traces on S of fields whose trace vanishes
    on the boundary of S.  With an L2(S)-orthonormal basis of it, the stiffness
    ``(d_S u, d_S v)_S`` is diagonalised; modes with
    ``mu < 1e-8 max(mu)`` form the kernel and are dropped; the remaining modes
    are rescaled to unit energy so that ``(psi_i, psi_j)_S = lam_j delta_ij``.

    Within clusters of repeated eigenvalues the basis is fixed by
    diagonalising a seeded random pointwise quadratic form, and signs are
    fixed by a seeded random linear functional; both are defined through
    point values on S and are therefore independent of LAPACK choices.
    """
    tag = tag.unrotated
    k, d, p = tag.k, tag.d, tag.p
    if not k + 1 <= l <= d:
        raise ValueError(f"subsimplex dimension {l} invalid for k={k}")
    ref = reference_simplex(d)
    span = modal_span(tag)
    sub = ref.canonical(l)
    frame = ref.frame(sub)
    z = _nullspace(_facet_constraints(tag, sub), NULLSPACE_TOL)
    if z.shape[1] == 0:
        return EigenBubbleBasis(tag, l, np.zeros((span.dim, 0)), np.zeros(0), np.zeros(0), 0)
    rule = quadrature(l, 2 * p + 2)
    x = ref.points(sub, rule.bary)
    sw = np.sqrt(rule.weights)
    vals, jac = span.evaluate(x, z)
    tr, _ = trace_forms(k, d, vals, jac, frame)
    a = (tr * sw[:, None, None]).transpose(0, 2, 1).reshape(-1, z.shape[1])
    _, s, vt = _column_space(a, NULLSPACE_TOL)
    if len(s) == 0:
        empty = np.zeros((span.dim, 0))
        return EigenBubbleBasis(tag, l, empty, np.zeros(0), np.zeros(0), 0)
    b = z @ vt.T / s
    vals, jac = span.evaluate(x, b)
    tr, dtr = trace_forms(k, d, vals, jac, frame)
    dm = (dtr * sw[:, None, None]).transpose(0, 2, 1).reshape(-1, b.shape[1])
    kmat = dm.T @ dm
    mu, u = np.linalg.eigh(0.5 * (kmat + kmat.T))
    n_kernel = int(np.sum(mu < ZERO_MODE_TOL * mu[-1])) if mu[-1] > 0 else len(mu)
    u = u[:, n_kernel:]
    keep = mu[n_kernel:]

    rng = np.random.default_rng([TIEBREAK_SEED, d, k, l, len(rule)])
    rho = rng.uniform(1.0, 2.0, size=len(rule))
    sig = rng.standard_normal(size=(len(rule), tr.shape[-1]))
    trw = tr.transpose(1, 0, 2)  # (nb, nq, ntr)
    start = 0
    while start < len(keep):
        stop = start + 1
        while stop < len(keep) and keep[stop] - keep[start] <= CLUSTER_TOL * keep[-1]:
            stop += 1
        if stop - start > 1:
            uc = u[:, start:stop]
            flat = (trw * np.sqrt(rho)[None, :, None]).reshape(trw.shape[0], -1)
            g = flat @ flat.T
            gc = uc.T @ g @ uc
            _, rot = np.linalg.eigh(0.5 * (gc + gc.T))
            u[:, start:stop] = uc @ rot
        start = stop
    lin = np.einsum("iqc,qc->i", trw, sig) @ u
    u = u * np.where(lin < 0, -1.0, 1.0)
    mu_j = np.sum(u * (kmat @ u), axis=0)
    psi = b @ u / np.sqrt(mu_j)
    psi.setflags(write=False)
    return EigenBubbleBasis(tag, l, psi, 1.0 / mu_j, mu, n_kernel)


# --------------------------------------------------------------------------- dofs


@dataclass(frozen=True)
class DofTag:
    """Label of a degree of freedom.

    ``dim`` and ``entity`` locate the subsimplex in the reference simplex
    (``entity`` indexes ``ReferenceSimplex.subsimplices(dim)``); ``kind`` is
    'whitney', 'typeI' or 'typeII'; ``j`` indexes eigenfunctions.
    """

    dim: int
    entity: int
    kind: str
    j: int


@dataclass(frozen=True)
class _DofGroup:
    sub: tuple[int, ...]
    use_derivative: bool
    weights: np.ndarray  # (nq,)
    points: np.ndarray  # (nq, d)
    frame: np.ndarray  # (d, l)
    payload: np.ndarray  # (nq, ndof, ncomp)
    first: int


@dataclass(frozen=True)
class DofSet:
    """Ordered functionals: per dimension, per subsimplex, Whitney/type-I/type-II."""

    tag: SpaceTag
    tags: tuple[DofTag, ...]
    groups: tuple[_DofGroup, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.tags)

    def apply(self, evaluate) -> np.ndarray:
        """Apply all functionals to a family of functions.

        ``evaluate(x)`` must return proxy values (npts, nf, ncomp) and
        Jacobians (npts, nf, ncomp, d).  Returns an array (ndof, nf).
        """
        tag = self.tag
        rows = []
        for g in self.groups:
            vals, jac = evaluate(g.points)
            tr, dtr = trace_forms(tag.k, tag.d, vals, jac, g.frame)
            field_ = dtr if g.use_derivative else tr
            wp = (g.payload * g.weights[:, None, None]).transpose(1, 0, 2).reshape(g.payload.shape[1], -1)
            rows.append(wp @ field_.transpose(0, 2, 1).reshape(-1, field_.shape[1]))
        return np.vstack(rows)


def _group(ref, sub, rule, payload, use_derivative, first):
    q = ref.isometry(sub)
    can = ref.canonical(len(sub) - 1)
    points = ref.points(can, rule.bary) @ q.T
    frame = np.eye(ref.d) if len(sub) == ref.d + 1 else q @ ref.frame(can)
    return _DofGroup(sub, use_derivative, rule.weights, points, frame, payload, first)


@lru_cache(maxsize=None)
def build_dofs(tag: SpaceTag) -> DofSet:
    """Whitney, type-I and type-II functionals for ``tag`` on the reference simplex.

    Type-I functionals on an l-subsimplex (l > k) are the moments
    ``(d_S psi_j, d_S tr_S v)``; type-II functionals on l >= k use the
    exterior derivatives of the companion (k-1)-form eigenfunctions,
    ``(d_S psi'_j, tr_S v)``; Whitney functionals on k-subsimplices are
    ``(1, tr_S v)`` (point values for k = 0).  For k = d the Whitney moment is
    taken against the L2-normalised constant.
    """
    tag = tag.unrotated
    k, d, p = tag.k, tag.d, tag.p
    ref = reference_simplex(d)
    comp = tag.companion()
    tags: list[DofTag] = []
    groups: list[_DofGroup] = []
    for l in range(k, d + 1):
        rule = quadrature(l, 2 * p + 2)
        payloads = []
        if l == k:
            scale = 1.0 / math.sqrt(ref.volume) if k == d else 1.0
            payloads.append(("whitney", np.full((len(rule), 1, 1), scale), False))
        else:
            eig = bubble_eigenbasis(tag, l)
            if eig.size:
                _, dpsi = eig.intrinsic(rule)
                payloads.append(("typeI", dpsi, True))
        if comp is not None:
            ceig = bubble_eigenbasis(comp, l)
            if ceig.size:
                _, dpsi = ceig.intrinsic(rule)
                payloads.append(("typeII", dpsi, False))
        for ent, sub in enumerate(ref.subsimplices(l)):
            for kind, payload, use_d in payloads:
                groups.append(_group(ref, sub, rule, payload, use_d, len(tags)))
                tags.extend(DofTag(l, ent, kind, j) for j in range(payload.shape[1]))
    if len(tags) != tag.dim:
        raise ArithmeticError(f"{tag}: {len(tags)} functionals for a space of dimension {tag.dim}")
    return DofSet(tag, tuple(tags), tuple(groups))


# -------------------------------------------------------------------- dual basis


_ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])


@dataclass(frozen=True)
class ReferenceElement:
    """Nodal (Ciarlet-dual) basis of X^k(T) with cached tabulations.

    Attributes
    ----------
    coef : ndarray (dim, ndof)
        Basis functions as combinations of the modal span.
    vals, dvals : ndarrays (nq, ndof, ncomp), (nq, ndof, dcomp)
        Tabulation at the points of ``rule`` (degree 2p + 2).
    vandermonde_cond : float
        2-norm condition number of the dof/modal Vandermonde matrix.
    """

    tag: SpaceTag
    dofs: DofSet = field(repr=False)
    coef: np.ndarray = field(repr=False)
    rule: QuadratureRule = field(repr=False)
    vals: np.ndarray = field(repr=False)
    dvals: np.ndarray = field(repr=False)
    vandermonde_cond: float = 0.0

    @property
    def ndof(self) -> int:
        return self.coef.shape[1]

    @property
    def dof_tags(self) -> tuple[DofTag, ...]:
        return self.dofs.tags

    def _mask(self, pred) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.dof_tags) if pred(t)], dtype=int)

    @property
    def interior(self) -> np.ndarray:
        return self._mask(lambda t: t.dim == self.tag.d)

    @property
    def interface(self) -> np.ndarray:
        return self._mask(lambda t: t.dim < self.tag.d)

    @property
    def type1(self) -> np.ndarray:
        """Type-I functions, Whitney forms included."""
        return self._mask(lambda t: t.kind != "typeII")

    @property
    def type2(self) -> np.ndarray:
        return self._mask(lambda t: t.kind == "typeII")

    @property
    def whitney(self) -> np.ndarray:
        return self._mask(lambda t: t.kind == "whitney")

    def entity_dofs(self, dim: int, entity: int) -> np.ndarray:
        return self._mask(lambda t: t.dim == dim and t.entity == entity)

    def tabulate(self, x: np.ndarray):
        """Values (npts, ndof, ncomp) and exterior derivatives (npts, ndof, dcomp)."""
        vals, jac = modal_span(self.tag).evaluate(np.atleast_2d(x), self.coef)
        dv = exterior_derivative(self.tag.k, self.tag.d, jac)
        if self.tag.rotated:
            vals = vals @ _ROT.T
        return vals, dv

    def evaluator(self):
        """Callable returning values and Jacobians of the unrotated basis."""
        span = modal_span(self.tag)
        return lambda x: span.evaluate(x, self.coef)


def dual_basis(span: ModalSpan, dofs: DofSet, rotated: bool = False) -> ReferenceElement:
    """Invert the Vandermonde matrix of ``dofs`` against ``span``.

    Raises
    ------
    ArithmeticError
        If the Vandermonde matrix is singular or its condition number exceeds
        1e12.
    """
    tag = span.tag
    vmat = dofs.apply(span.evaluate)
    cond = np.linalg.cond(vmat)
    if not np.isfinite(cond) or cond > 1e12:
        raise ArithmeticError(f"functionals of {tag} are not unisolvent (cond={cond:.3e})")
    coef = np.linalg.solve(vmat, np.eye(len(dofs)))
    coef.setflags(write=False)
    full = SpaceTag(tag.k, tag.d, tag.kind, tag.p, rotated)
    rule = quadrature(tag.d, 2 * tag.p + 2)
    ref = reference_simplex(tag.d)
    x = rule.bary @ ref.vertices
    vals, jac = span.evaluate(x, coef)
    dvals = exterior_derivative(tag.k, tag.d, jac)
    if rotated:
        vals = vals @ _ROT.T
    for arr in (vals, dvals):
        arr.setflags(write=False)
    return ReferenceElement(full, dofs, coef, rule, vals, dvals, float(cond))


def _cache_path(tag: SpaceTag) -> Path | None:
    root = os.environ.get(CACHE_ENV)
    if not root:
        return None
    return Path(root) / f"element_d{tag.d}_k{tag.k}_{tag.kind}_p{tag.p}.pkl"


@lru_cache(maxsize=None)
def reference_element(tag: SpaceTag) -> ReferenceElement:
    """Build (or load from the optional on-disk cache) the element for ``tag``."""
    base = tag.unrotated
    if tag.rotated:
        el = reference_element(base)
        rot_vals = el.vals @ _ROT.T
        rot_vals.setflags(write=False)
        return ReferenceElement(tag, el.dofs, el.coef, el.rule, rot_vals, el.dvals,
                                el.vandermonde_cond)
    path = _cache_path(base)
    if path is not None and path.exists():
        with open(path, "rb") as fh:
            return pickle.load(fh)
    el = dual_basis(modal_span(base), build_dofs(base))
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.tmp")
        with open(tmp, "wb") as fh:
            pickle.dump(el, fh)
        os.replace(tmp, path)
    return el


# ------------------------------------------------------------ reference matrices


def component_matrices(element: ReferenceElement):
    """Mass and stiffness blocks split by proxy component pairs.

    Returns arrays ``mass[a, b] = (phi_i^a, phi_j^b)`` of shape
    (ncomp, ncomp, ndof, ndof) and the analogue for exterior derivatives.
    """
    w = element.rule.weights
    mass = np.einsum("q,qia,qjb->abij", w, element.vals, element.vals, optimize=True)
    stiff = np.einsum("q,qia,qjb->abij", w, element.dvals, element.dvals, optimize=True)
    return mass, stiff


def reference_matrices(element: ReferenceElement, alpha: float = 1.0, beta: float = 1.0):
    """Reference mass, stiffness and Riesz matrices.

    Returns
    -------
    dict
        Keys 'M', 'K', 'A' with ``A = beta M + alpha K``.
    """
    w = element.rule.weights
    m = np.einsum("q,qic,qjc->ij", w, element.vals, element.vals, optimize=True)
    kk = np.einsum("q,qic,qjc->ij", w, element.dvals, element.dvals, optimize=True)
    m = 0.5 * (m + m.T)
    kk = 0.5 * (kk + kk.T)
    return {"M": m, "K": kk, "A": beta * m + alpha * kk}


def decoupling_constant(tag: SpaceTag) -> float:
    """Smallest eigenvalue of the mass matrix against its type-I/II block diagonal."""
    el = reference_element(tag)
    m = reference_matrices(el)["M"]
    t1, t2 = el.type1, el.type2
    bd = np.zeros_like(m)
    bd[np.ix_(t1, t1)] = m[np.ix_(t1, t1)]
    bd[np.ix_(t2, t2)] = m[np.ix_(t2, t2)]
    return float(sla.eigh(m, bd, eigvals_only=True)[0])
