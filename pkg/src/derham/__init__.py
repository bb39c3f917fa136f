"""High-order finite elements for the simplicial L2 de Rham complex.

Eigen-bubble bases with type-I/type-II degrees of freedom, star-patch Schwarz
preconditioners and Hodge-Laplace block solvers.
"""

from derham.simplex import ReferenceSimplex, reference_simplex
from derham.quadrature import QuadratureRule, quadrature
from derham.reference import (
    SpaceTag,
    EigenBubbleBasis,
    DofSet,
    ReferenceElement,
    modal_span,
    bubble_eigenbasis,
    build_dofs,
    dual_basis,
    reference_element,
    reference_matrices,
    decoupling_constant,
)
from derham.mesh import (
    SimplicialMesh,
    StarPatch,
    CellMap,
    build_freudenthal,
    build_unit_triangle_mesh,
    refine_bey,
    build_fichera,
    star,
    cell_map,
)

from derham.linalg import KrylovReport, sym_gen_eig, cholesky, solve, pcg, minres, lanczos_extremes
from derham.assembly import (
    GlobalSpace,
    GlobalOperator,
    number_dofs,
    assemble_operator,
    assemble_submatrix,
    derivative_matrix,
    whitney_restriction,
    whitney_prolongation,
    load_vector,
)
from derham.schwarz import (
    DecompositionSpec,
    HybridSchwarz,
    build_decomposition,
    build_hybrid,
    estimate_weights,
    apply_hybrid,
    vcycle,
)
from derham.hodge import assemble_hodge, solve_hodge, classify_eigenvalues
from derham.costs import CostLedger

__all__ = [
    "ReferenceSimplex",
    "reference_simplex",
    "QuadratureRule",
    "quadrature",
    "SpaceTag",
    "EigenBubbleBasis",
    "DofSet",
    "ReferenceElement",
    "modal_span",
    "bubble_eigenbasis",
    "build_dofs",
    "dual_basis",
    "reference_element",
    "reference_matrices",
    "decoupling_constant",
    "SimplicialMesh",
    "StarPatch",
    "CellMap",
    "build_freudenthal",
    "build_unit_triangle_mesh",
    "refine_bey",
    "build_fichera",
    "star",
    "cell_map",
    "KrylovReport",
    "sym_gen_eig",
    "cholesky",
    "solve",
    "pcg",
    "minres",
    "lanczos_extremes",
    "GlobalSpace",
    "GlobalOperator",
    "number_dofs",
    "assemble_operator",
    "assemble_submatrix",
    "derivative_matrix",
    "whitney_restriction",
    "whitney_prolongation",
    "load_vector",
    "DecompositionSpec",
    "HybridSchwarz",
    "build_decomposition",
    "build_hybrid",
    "estimate_weights",
    "apply_hybrid",
    "vcycle",
    "assemble_hodge",
    "solve_hodge",
    "classify_eigenvalues",
    "CostLedger",
]
