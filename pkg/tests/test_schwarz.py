import numpy as np
import pytest

from derham.assembly import assemble_operator, assemble_submatrix, derivative_matrix, number_dofs
from derham.linalg import pcg
from derham.mesh import build_freudenthal, refine_bey, single_cell_mesh
from derham.reference import SpaceTag
from derham.schwarz import (
    DecompositionSpec,
    ExactGroup,
    HybridSchwarz,
    JacobiGroup,
    PatchGroup,
    apply_hybrid,
    build_decomposition,
    build_hybrid,
    build_multigrid,
    estimate_weights,
    potential_patch_solve,
    vcycle,
)
from derham.simplex import reference_simplex

RECOMMENDED = {0: "pafw0", 1: "ph-typeI", 2: "pafw1"}
ALL_SPECS = [(0, "pafw0"), (1, "pafw0"), (1, "ph"), (1, "ph-typeI"), (2, "pafw0"), (2, "pafw1"),
             (2, "ph"), (2, "ph-typeI")]


def tag3(k, p):
    return SpaceTag(k, 3, "first", p)


@pytest.fixture(scope="module")
def two_level():
    return refine_bey(build_freudenthal(1))


def patch_sum(hs):
    return next(g for g in hs.groups if g.name == "patches")


def dense_of(apply, n):
    return np.column_stack([apply(e) for e in np.eye(n)])


def test_spec_validation():
    with pytest.raises(ValueError):
        DecompositionSpec("bddc")
    with pytest.raises(ValueError):
        DecompositionSpec("pafw1").validate(1, 3)
    with pytest.raises(ValueError):
        DecompositionSpec("ph").validate(0, 3)
    assert DecompositionSpec("ph").potential == "regularized"
    assert DecompositionSpec("ph-typeI").potential == "typeI-reduced"
    assert DecompositionSpec("pafw0", True).label() == "pafw0+J"


@pytest.fixture(scope="module")
def cube3():
    return build_freudenthal(3)


def test_patch_dims_ned4(cube3):
    s = number_dofs(cube3, tag3(1, 4))
    dims = build_decomposition(DecompositionSpec("ph", split=False), s).max_dims()
    assert dims[("potential", 0)] == 175 and dims[("primal", 1)] == 148
    dims = build_decomposition(DecompositionSpec("ph-typeI", split=True), s).max_dims()
    assert dims[("potential", 0)] == 151 and dims[("primal", 1)] == 55
    dims = build_decomposition(DecompositionSpec("pafw0", split=False), s).max_dims()
    assert dims[("primal", 0)] == 776


def test_patch_dims_rt4(cube3):
    s = number_dofs(cube3, tag3(2, 4))
    dims = build_decomposition(DecompositionSpec("pafw1", split=True), s).max_dims()
    assert dims == {("primal", 1): 60}


@pytest.mark.parametrize("k,name", ALL_SPECS)
@pytest.mark.parametrize("split", [True, False])
def test_cover_exhaustive(two_level, k, name, split):
    s = number_dofs(two_level, tag3(k, 3))
    dec = build_decomposition(DecompositionSpec(name, split), s)
    assert dec.covered().all()


def test_exact_group_is_direct_solver():
    m = build_freudenthal(1)
    s = number_dofs(m, tag3(1, 2))
    op = assemble_operator(s, 1.0, 1.0)
    hs = HybridSchwarz(op, [ExactGroup(op)])
    estimate_weights(hs, seed=3)
    assert hs.weights[0] == pytest.approx(1.0, abs=1e-8)
    b = np.random.default_rng(0).standard_normal(s.n)
    _, rep = pcg(op.matvec, hs, b)
    assert rep.iterations == 1


def test_jacobi_weight_on_diagonal_operator():
    m = build_freudenthal(1)
    s = number_dofs(m, SpaceTag(3, 3, "first", 2))
    op = assemble_operator(s, 0.0, 1.0)
    a = op.to_sparse()
    assert abs(a - np.diag(a.diagonal())).max() < 1e-13 * a.diagonal().max()
    hs = HybridSchwarz(op, [JacobiGroup(op, np.arange(s.n))])
    estimate_weights(hs)
    assert hs.weights[0] == pytest.approx(1.0, abs=1e-10)


def test_interior_jacobi_exact_on_reference_cell():
    m = single_cell_mesh(reference_simplex(3).vertices)
    s = number_dofs(m, tag3(1, 5))
    op = assemble_operator(s, 1.0, 0.0)
    idx = np.intersect1d(s.interior, s.type1)
    r = np.random.default_rng(1).standard_normal(s.n)
    z = JacobiGroup(op, idx).apply(r)
    block = assemble_submatrix(op, idx)
    np.testing.assert_allclose(z[idx], np.linalg.solve(block, r[idx]), atol=1e-12)


def test_weight_inside_spectrum():
    m = build_freudenthal(1)
    s = number_dofs(m, tag3(1, 2))
    op = assemble_operator(s, 1.0, 1.0)
    dec = build_decomposition(DecompositionSpec("pafw0", split=False), s)
    g = PatchGroup(op, dec.patches, np.arange(s.n))
    hs = HybridSchwarz(op, [g])
    estimate_weights(hs, seed=5)
    a = op.to_sparse().toarray()
    b = dense_of(g.apply, s.n)
    ev = np.sort(np.linalg.eigvals(b @ a).real)
    assert ev[0] * (1 - 1e-10) <= hs.weights[0] <= ev[-1] * (1 + 1e-10)


@pytest.mark.parametrize("k,name", [(0, "pafw0"), (1, "ph"), (2, "pafw1"), (2, "ph")])
def test_patch_group_matches_explicit_patches(cube3, k, name):
    """Shared factors give the same action as independent dense patch solves."""
    s = number_dofs(cube3, tag3(k, 2))
    op = assemble_operator(s, 2.0, 1.0)
    dec = build_decomposition(DecompositionSpec(name, split=True), s)
    r = np.random.default_rng(k).standard_normal(s.n)
    primal = [p for p in dec.patches if p.role == "primal"]
    g = PatchGroup(op, primal, np.arange(s.n))
    assert g.unique_factors < len(primal)
    expected = np.zeros(s.n)
    for p in primal:
        expected[p.indices] += np.linalg.solve(assemble_submatrix(op, p.indices), r[p.indices])
    np.testing.assert_allclose(g.apply(r), expected, rtol=1e-10, atol=1e-12)


def test_potential_patch_solve_through_d(two_level):
    s = number_dofs(two_level, tag3(2, 2))
    dec = build_decomposition(DecompositionSpec("ph", split=False), s)
    pot = [p for p in dec.patches if p.role == "potential"]
    op = assemble_operator(s, 1.0, 2.0)
    pop = assemble_operator(dec.potential_space, alpha=2.0, beta=2.0 * 1e-8)
    dmat = derivative_matrix(dec.potential_space, s)
    g = PatchGroup(pop, pot, np.arange(dec.potential_space.n), dmat)
    r = np.random.default_rng(2).standard_normal(s.n)
    rr = dmat.T @ r
    expected = np.zeros(dec.potential_space.n)
    for p in pot:
        expected[p.indices] += np.linalg.solve(assemble_submatrix(pop, p.indices), rr[p.indices])
    np.testing.assert_allclose(potential_patch_solve(g, r), dmat @ expected, rtol=1e-7, atol=1e-9)
    with pytest.raises(ValueError):
        potential_patch_solve(PatchGroup(op, [], np.arange(s.n)), r)


@pytest.mark.parametrize("k,expected", [(1, 0.0), (2, 1e-8 * 3.0)])
def test_regularization(two_level, k, expected):
    s = number_dofs(two_level, tag3(k, 2))
    op = assemble_operator(s, 1.0, 3.0)
    hs, _ = build_hybrid(s, op, DecompositionSpec("ph", split=True), seed=0)
    pot = patch_sum(hs).parts[0]
    assert pot.op.beta == expected
    assert pot.op.alpha == 3.0
    hs, _ = build_hybrid(s, op, DecompositionSpec("ph-typeI", split=True), seed=0)
    assert patch_sum(hs).parts[0].op.beta == 0.0


def test_single_level_vcycle_is_exact():
    m = build_freudenthal(2)
    s = number_dofs(m, tag3(1, 1))
    mg = build_multigrid(s, 1.0, 1.0, DecompositionSpec("ph"), assemble_operator(s).ledger)
    assert mg.nlevels == 1
    r = np.random.default_rng(0).standard_normal(s.n)
    a = assemble_operator(s).to_sparse().toarray()
    np.testing.assert_allclose(vcycle(mg, r), np.linalg.solve(a, r), atol=1e-12)


def test_lowest_order_smoothers(two_level):
    s0 = number_dofs(two_level, tag3(0, 1))
    op0 = assemble_operator(s0)
    mg = build_multigrid(s0, 1.0, 1.0, DecompositionSpec("pafw0"), op0.ledger)
    r = np.random.default_rng(0).standard_normal(s0.n)
    # vertex patches at lowest order are point-Jacobi
    np.testing.assert_allclose(mg.smoothers[0].apply(r), r / op0.diagonal(), rtol=1e-12)
    s1 = number_dofs(two_level, tag3(1, 1))
    dec = build_decomposition(DecompositionSpec("ph", split=False), s1)
    assert {len(p.indices) for p in dec.patches} == {1}
    assert {(p.role, p.seed[0]) for p in dec.patches} == {("potential", 0), ("primal", 1)}


@pytest.mark.parametrize("k", [0, 1, 2])
def test_lowest_order_split_equals_unsplit(two_level, k):
    s = number_dofs(two_level, tag3(k, 1))
    op = assemble_operator(s, 1.0, 1.0)
    r = np.random.default_rng(k).standard_normal(s.n)
    a, _ = build_hybrid(s, op, DecompositionSpec(RECOMMENDED[k], True), seed=4)
    b, _ = build_hybrid(s, op, DecompositionSpec(RECOMMENDED[k], False), seed=4)
    np.testing.assert_array_equal(a(r), b(r))


@pytest.mark.parametrize("k,name", [(0, "pafw0"), (1, "ph-typeI"), (1, "ph"), (2, "pafw1")])
@pytest.mark.parametrize("split", [True, False])
def test_preconditioner_spd(two_level, k, name, split):
    s = number_dofs(two_level, tag3(k, 2))
    op = assemble_operator(s, 1.0, 1.0)
    hs, _ = build_hybrid(s, op, DecompositionSpec(name, split), seed=1)
    assert hs.sweep == hs.sweep[::-1]
    assert all(w > 0 for w in hs.weights)
    p = dense_of(hs, s.n)
    assert np.abs(p - p.T).max() <= 1e-9 * np.abs(p).max()
    assert np.linalg.eigvalsh(0.5 * (p + p.T)).min() > 0


@pytest.mark.parametrize("k", [0, 1, 2])
def test_scale_invariance(two_level, k):
    s = number_dofs(two_level, tag3(k, 2))
    b = np.random.default_rng(0).standard_normal(s.n)
    its = []
    for scale in (1.0, 10.0):
        op = assemble_operator(s, 1.0 * scale, 1.0 * scale)
        hs, _ = build_hybrid(s, op, DecompositionSpec(RECOMMENDED[k], True), seed=2)
        _, rep = pcg(op.matvec, hs, b, rtol=1e-8)
        its.append(rep.iterations)
    assert its[0] == its[1]


def test_unweighted_application_rejected():
    m = build_freudenthal(1)
    op = assemble_operator(number_dofs(m, tag3(0, 1)))
    with pytest.raises(ValueError):
        apply_hybrid(HybridSchwarz(op, [ExactGroup(op)]), np.ones(op.n))
