import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from derham.assembly import (
    assemble_operator,
    assemble_submatrix,
    derivative_matrix,
    evaluate_field,
    load_vector,
    number_dofs,
    whitney_prolongation,
    whitney_restriction,
)
from derham.costs import CostLedger
from derham.mesh import (
    build_freudenthal,
    build_unit_triangle_mesh,
    cell_map,
    refine_bey,
    single_cell_mesh,
    star,
)
from derham.reference import SpaceTag, reference_element, reference_matrices
from derham.simplex import reference_simplex


def tag3(k, p):
    return SpaceTag(k, 3, "first", p - 1 if k == 3 else p)


@pytest.fixture(scope="module")
def cube1():
    return build_freudenthal(1)


@pytest.fixture(scope="module")
def cube2():
    return build_freudenthal(2)


def test_single_cell_cg4():
    m = single_cell_mesh(reference_simplex(3).vertices)
    s = number_dofs(m, SpaceTag(0, 3, "first", 4))
    assert s.n == 35 and len(s.interior) == 1


@pytest.mark.parametrize("k", range(4))
def test_reference_congruent_cell(k):
    m = single_cell_mesh(reference_simplex(3).vertices)
    s = number_dofs(m, tag3(k, 3))
    a = assemble_operator(s, 1.0, 1.0).to_sparse().toarray()
    r = reference_matrices(s.element)
    order = np.argsort(s.cell_dofs[0])
    np.testing.assert_allclose(a, r["A"][np.ix_(order, order)], atol=1e-12)
    sub = assemble_submatrix(assemble_operator(s, 1.0, 1.0), s.interior)
    np.testing.assert_allclose(sub, np.diag(np.diag(sub)), atol=1e-12)


@pytest.mark.parametrize("k", range(4))
def test_matrix_free_matches_sparse(cube1, k):
    s = number_dofs(cube1, tag3(k, 3))
    op = assemble_operator(s, 1.3, 0.7)
    a = op.to_sparse()
    x = np.random.default_rng(k).standard_normal(s.n)
    y = op.matvec(x)
    assert np.abs(a @ x - y).max() <= 1e-12 * np.abs(y).max()
    assert abs(a - a.T).max() <= 1e-12 * abs(a).max()
    np.testing.assert_allclose(op.diagonal(), a.diagonal(), rtol=1e-13)


@given(k=st.integers(0, 3), p=st.integers(1, 3), seed=st.integers(0, 10**6))
def test_operator_positive(k, p, seed):
    m = build_freudenthal(1)
    op = assemble_operator(number_dofs(m, tag3(k, p)), alpha=1.0, beta=0.5)
    x = np.random.default_rng(seed).standard_normal(op.n)
    assert x @ op.matvec(x) > 0


def test_invalid_coefficients(cube1):
    s = number_dofs(cube1, tag3(1, 1))
    with pytest.raises(ValueError):
        assemble_operator(s, 0.0, 0.0)
    with pytest.raises(ValueError):
        assemble_operator(s, -1.0, 1.0)


def test_operator_ledger(cube1):
    led = CostLedger()
    op = assemble_operator(number_dofs(cube1, tag3(0, 2)), ledger=led)
    op.matvec(np.ones(op.n))
    assert led.flops["operator_apply"] == 2 * 10 * 10 * 6


def test_partitions(cube2):
    s = number_dofs(cube2, tag3(1, 4))
    allidx = np.arange(s.n)
    np.testing.assert_array_equal(np.sort(np.r_[s.interior, s.interface]), allidx)
    np.testing.assert_array_equal(np.sort(np.r_[s.type1, s.type2]), allidx)
    assert set(s.whitney) <= set(s.type1)
    # a dof on entity S is shared by exactly the cells of the star of S
    for i in np.random.default_rng(0).choice(s.n, 30, replace=False):
        cells = s.cells_of_dof[i].indices
        np.testing.assert_array_equal(np.sort(cells), cube2.cells_of(s.dof_dim[i], s.dof_entity[i]))


def test_dirichlet_elimination():
    m = build_freudenthal(2)
    m.mark_boundary("dirichlet")
    for k in range(3):
        s = number_dofs(m, tag3(k, 2))
        free = number_dofs(m, tag3(k, 2), dirichlet=False)
        assert s.n + len(s.constrained) == free.n
        assert np.all((s.cell_dofs >= -1) & (s.cell_dofs < s.n))
        # constrained entities are boundary entities of dimension k..d-1
        on_bnd = set()
        for l in range(k, 3):
            on_bnd |= {(l, int(e)) for e in m.dirichlet_entities(l)}
        kept = set(zip(s.dof_dim.tolist(), s.dof_entity.tolist()))
        assert not (kept & on_bnd)
    s3 = number_dofs(m, tag3(3, 2))
    assert len(s3.constrained) == 0


def _facet_points(mesh, cell, facet, bary):
    ref = reference_simplex(3)
    local = list(mesh.cell_entities[2][cell]).index(facet)
    return bary @ ref.vertices[list(ref.subsimplices(2)[local])]


@pytest.mark.parametrize("k,p", [(0, 3), (1, 3), (2, 3), (1, 4)])
def test_trace_conformity(cube2, k, p):
    s = number_dofs(cube2, tag3(k, p))
    coef = np.random.default_rng(p).standard_normal(s.n)
    bary = np.random.default_rng(1).dirichlet(np.ones(3), 6)
    counts = np.asarray(cube2.incidence[2].sum(axis=0)).ravel()
    for f in np.flatnonzero(counts == 2):
        fv = cube2.vertices[cube2.entities[2][f]]
        nrm = np.cross(fv[1] - fv[0], fv[2] - fv[0])
        nrm /= np.linalg.norm(nrm)
        c0, c1 = cube2.cells_of(2, f)
        u0, _ = evaluate_field(s, coef, c0, _facet_points(cube2, c0, f, bary))
        u1, _ = evaluate_field(s, coef, c1, _facet_points(cube2, c1, f, bary))
        jump = u0 - u1
        if k == 1:
            jump = jump - np.outer(jump @ nrm, nrm)
        elif k == 2:
            jump = jump @ nrm
        assert np.abs(jump).max() <= 1e-10 * max(1.0, np.abs(u0).max())


@pytest.mark.parametrize("k,p", [(0, 3), (1, 3), (2, 3), (0, 4), (1, 4)])
def test_global_d_compatibility(cube2, k, p):
    src = number_dofs(cube2, tag3(k, p))
    dst = number_dofs(cube2, tag3(k + 1, p))
    dm = derivative_matrix(src, dst).tocsc()
    type2 = {(int(dst.dof_dim[i]), int(dst.dof_entity[i]), int(dst.dof_j[i])): i for i in dst.type2}
    for col in np.flatnonzero(src.dof_kind == 1):
        rows = dm.indices[dm.indptr[col] : dm.indptr[col + 1]]
        vals = dm.data[dm.indptr[col] : dm.indptr[col + 1]]
        target = type2[(int(src.dof_dim[col]), int(src.dof_entity[col]), int(src.dof_j[col]))]
        np.testing.assert_array_equal(rows, [target])
        np.testing.assert_allclose(vals, [1.0], atol=1e-12)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_derivative_matrix_matches_fields(cube1, k):
    src = number_dofs(cube1, tag3(k, 2))
    dst = number_dofs(cube1, tag3(k + 1, 2))
    dm = derivative_matrix(src, dst)
    coef = np.random.default_rng(k).standard_normal(src.n)
    x = np.random.default_rng(9).dirichlet(np.ones(4), 5) @ reference_simplex(3).vertices
    for c in range(cube1.num_cells):
        _, du = evaluate_field(src, coef, c, x)
        v, _ = evaluate_field(dst, dm @ coef, c, x)
        np.testing.assert_allclose(v, du, atol=1e-11)


@pytest.mark.parametrize("p", [1, 3])
def test_whitney_embedding(cube1, p):
    for k in range(3):
        s = number_dofs(cube1, tag3(k, p))
        e = whitney_restriction(s)
        assert set(e.data) == {1.0}
        np.testing.assert_array_equal(e.sum(axis=0), 1)
        assert e.shape[1] == cube1.num_entities(k)
        if p == 1:
            op = assemble_operator(s)
            full = op.to_sparse().toarray()
            np.testing.assert_allclose(assemble_submatrix(op, s.whitney), full, atol=1e-13)


def test_whitney_prolongation():
    coarse_mesh = build_freudenthal(2)
    fine_mesh = refine_bey(coarse_mesh)
    rng = np.random.default_rng(0)
    for k in range(2):
        c0 = number_dofs(coarse_mesh, tag3(k, 1))
        f0 = number_dofs(fine_mesh, tag3(k, 1))
        c1 = number_dofs(coarse_mesh, tag3(k + 1, 1))
        f1 = number_dofs(fine_mesh, tag3(k + 1, 1))
        p0 = whitney_prolongation(f0, c0)
        p1 = whitney_prolongation(f1, c1)
        x = rng.standard_normal(c0.n)
        lhs = derivative_matrix(f0, f1) @ (p0 @ x)
        rhs = p1 @ (derivative_matrix(c0, c1) @ x)
        assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(lhs).max()
        if k == 0:
            np.testing.assert_allclose(p0 @ np.ones(c0.n), 1.0, atol=1e-14)
    with pytest.raises(ValueError):
        whitney_prolongation(number_dofs(build_freudenthal(1), tag3(0, 1)), c0)


def test_prolongation_reproduces_fields():
    coarse_mesh = build_freudenthal(1)
    fine_mesh = refine_bey(coarse_mesh)
    x = np.random.default_rng(2).dirichlet(np.ones(4), 3) @ reference_simplex(3).vertices
    for k in range(3):
        c = number_dofs(coarse_mesh, tag3(k, 1))
        f = number_dofs(fine_mesh, tag3(k, 1))
        coef = np.random.default_rng(k).standard_normal(c.n)
        fine_coef = whitney_prolongation(f, c) @ coef
        for fc in range(fine_mesh.num_cells):
            uf, _ = evaluate_field(f, fine_coef, fc, x)
            xphys = cell_map(fine_mesh, fc)(x)
            parent = fine_mesh.parent[fc]
            cmap = cell_map(coarse_mesh, parent)
            xh = np.linalg.solve(cmap.jacobian, (xphys - cmap.shift).T).T
            uc, _ = evaluate_field(c, coef, parent, xh)
            np.testing.assert_allclose(uf, uc, atol=1e-12)


def test_load_vector_partition_of_unity():
    m = build_freudenthal(2)
    s = number_dofs(m, tag3(0, 3))
    # 1 is the sum of the vertex (hat) functions, so (1, 1) = |domain|
    assert load_vector(s, 1.0)[s.whitney].sum() == pytest.approx(1.0, rel=1e-13)
    m2 = build_unit_triangle_mesh(3)
    s2 = number_dofs(m2, SpaceTag(0, 2, "first", 2))
    assert load_vector(s2, 2.0)[s2.whitney].sum() == pytest.approx(2.0, rel=1e-13)


@pytest.mark.parametrize("p,expected", [(4, (776, 488, 175, 151, 148, 76, 121, 55))])
def test_ned_patch_dims(p, expected):
    m = build_freudenthal(3)
    ned = number_dofs(m, tag3(1, p))
    cg = number_dofs(m, tag3(0, p))

    def maxdim(space, l, sel=None):
        mask = None
        if sel is not None:
            mask = np.zeros(space.n, dtype=bool)
            mask[sel] = True
        return max(len(space.dofs_of(star(m, (l, e)).interior_entities, mask)) for e in range(m.num_entities(l)))

    got = (maxdim(ned, 0), maxdim(ned, 0, ned.interface), maxdim(cg, 0), maxdim(cg, 0, cg.interface),
           maxdim(ned, 1), maxdim(ned, 1, ned.interface), maxdim(ned, 1, ned.type1),
           maxdim(ned, 1, np.intersect1d(ned.type1, ned.interface)))
    assert got == expected


def test_rt_edge_patch():
    m = build_freudenthal(3)
    rt = number_dofs(m, tag3(2, 4))
    mask = np.zeros(rt.n, dtype=bool)
    mask[rt.interface] = True
    assert max(len(rt.dofs_of(star(m, (1, e)).interior_entities, mask)) for e in range(m.num_entities(1))) == 60


def test_element_mismatch():
    with pytest.raises(ValueError):
        number_dofs(build_unit_triangle_mesh(1), reference_element(tag3(0, 1)))
