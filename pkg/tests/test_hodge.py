import itertools

import numpy as np
import pytest

from derham.assembly import evaluate_field
from derham.hodge import (
    assemble_hodge,
    classify_eigenvalues,
    harmonic_dimension,
    hodge_tags,
    recommended_spec,
    solve_hodge,
)
from derham.mesh import build_fichera, build_unit_triangle_mesh, refine_bey, single_cell_mesh
from derham.reference import SpaceTag
from derham.simplex import reference_simplex

KUHN = np.array([[0.0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]])


@pytest.fixture(scope="module")
def fichera2():
    return build_fichera(2)


@pytest.fixture(scope="module")
def tet_refined():
    return refine_bey(single_cell_mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])))


def test_tags():
    assert hodge_tags(1, 3, 2) == (SpaceTag(0, 3, "first", 2), SpaceTag(1, 3, "first", 2))
    assert hodge_tags(3, 3, 2) == (SpaceTag(2, 3, "first", 2), SpaceTag(3, 3, "first", 1))
    with pytest.raises(ValueError):
        hodge_tags(0, 3, 1)
    assert recommended_spec(SpaceTag(1, 3, "first", 2)).name == "ph-typeI"
    assert recommended_spec(SpaceTag(3, 3, "first", 2)) is None


@pytest.mark.parametrize("k", [1, 2, 3])
def test_block_symmetry(fichera2, k):
    system, prec = assemble_hodge(k, fichera2, 2, gamma=1.0)
    a = system.dense()
    assert np.abs(a - a.T).max() <= 1e-12 * np.abs(a).max()
    x = np.random.default_rng(k).standard_normal(a.shape[0])
    np.testing.assert_allclose(system.matvec(x), a @ x, atol=1e-12 * np.abs(a).max())
    assert (prec.sigma_op.alpha, prec.sigma_op.beta) == (1.0, 1.0)
    assert (prec.u_op.alpha, prec.u_op.beta) == (1.0, 1.0)


def test_weighted_blocks(fichera2):
    _, prec = assemble_hodge(2, fichera2, 1, gamma=1e3)
    assert (prec.sigma_op.alpha, prec.sigma_op.beta) == (1e3, 1.0)
    assert (prec.u_op.alpha, prec.u_op.beta) == (1.0, 1e-3)


@pytest.mark.parametrize("k", [1, 2])
def test_saddle_consistency(fichera2, k):
    system, _ = assemble_hodge(k, fichera2, 3)
    ss, us = system.sigma_space, system.u_space
    mu = system.mass_u.to_sparse()
    b = (mu @ system.dmat).tocsc()
    type2 = {(int(us.dof_dim[i]), int(us.dof_entity[i]), int(us.dof_j[i])): i for i in us.type2}
    for col in np.flatnonzero(ss.dof_kind == 1)[:50]:
        row = type2[(int(ss.dof_dim[col]), int(ss.dof_entity[col]), int(ss.dof_j[col]))]
        np.testing.assert_allclose(b[:, col].toarray().ravel(), mu[:, row].toarray().ravel(), atol=1e-13)


def _whitney_face_coefficients(x):
    """Face Whitney forms sum_a lam_a c_a on a tetrahedron and their divergences."""
    a = np.vstack([x.T, np.ones(4)])
    g = np.linalg.inv(a)[:, :3]
    forms, divs = [], []
    for i, j, m in itertools.combinations(range(4), 3):
        c = np.zeros((4, 3))
        c[i] = 2 * np.cross(g[j], g[m])
        c[j] = -2 * np.cross(g[i], g[m])
        c[m] = 2 * np.cross(g[i], g[j])
        forms.append(c)
        divs.append(np.einsum("ad,ad->", g, c))
    return np.array(forms), np.array(divs)


def test_lowest_order_mixed_poisson():
    mesh = single_cell_mesh(KUHN)
    system, prec = assemble_hodge(3, mesh, 1, solver="exact")
    sigma, u, rep = solve_hodge(system, prec, rtol=1e-12)
    assert rep.converged
    # hand assembly: int lam_a lam_b = |T| (1 + delta_ab) / 20
    vol = abs(np.linalg.det(KUHN[1:] - KUHN[0])) / 6
    c, div = _whitney_face_coefficients(KUHN)
    gram = np.einsum("iad,jbd->ijab", c, c)
    m = vol / 20 * (gram.sum(axis=(2, 3)) + np.einsum("ijaa->ij", gram))
    b = vol * div
    ubar = vol / (b @ np.linalg.solve(m, b))
    np.testing.assert_allclose(sigma, np.linalg.solve(m, b) * ubar, rtol=1e-10)
    xhat = reference_simplex(3).vertices.mean(axis=0, keepdims=True)
    uval, _ = evaluate_field(system.u_space, u, 0, xhat)
    assert uval[0, 0] == pytest.approx(ubar, rel=1e-10)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_exact_blocks_p1(fichera2, k):
    its = []
    for gamma in (1.0, 10.0, 1e3):
        system, prec = assemble_hodge(k, fichera2, 1, gamma=gamma, solver="exact")
        sigma, u, rep = solve_hodge(system, prec)
        assert rep.converged
        its.append(rep.iterations)
        x = np.concatenate([sigma, u])
        res = np.linalg.norm(system.rhs - system.matvec(x)) / np.linalg.norm(system.rhs)
        assert res <= 1e-6
    assert its[0] <= 8 and its[2] <= 4
    assert its[1] <= its[0] + 1 and its[2] <= its[1] + 1


@pytest.mark.parametrize("k", [2, 3])
def test_solution_matches_dense(fichera2, k):
    system, prec = assemble_hodge(k, fichera2, 2, solver="exact")
    sigma, u, rep = solve_hodge(system, prec, rtol=1e-10)
    ref = np.linalg.solve(system.dense(), system.rhs)
    np.testing.assert_allclose(np.concatenate([sigma, u]), ref, atol=1e-6 * np.abs(ref).max())


@pytest.mark.parametrize("k", [1, 2, 3])
def test_schwarz_blocks_converge(fichera2, k):
    system, prec = assemble_hodge(k, fichera2, 2, gamma=1.0, solver="schwarz", seed=3)
    _, _, rep = solve_hodge(system, prec)
    assert rep.converged


def test_harmonic_space_trivial(fichera2):
    for k in (1, 2, 3):
        system, _ = assemble_hodge(k, fichera2, 1, solver="none")
        assert harmonic_dimension(system) == 0


@pytest.mark.parametrize("k", [1, 2])
def test_eigen_classification_2d(k):
    mesh = build_unit_triangle_mesh(2)
    for gamma in (1.0, 1e3):
        rep = classify_eigenvalues(k, mesh, 2, gamma)
        assert rep.passed, rep.unmatched
        system, _ = assemble_hodge(k, mesh, 2, solver="none")
        assert rep.n_minus_one >= system.sigma_space.n


@pytest.mark.parametrize("k", [1, 2, 3])
def test_eigen_classification_3d(tet_refined, k):
    rep = classify_eigenvalues(k, tet_refined, 1, 1.0)
    assert rep.passed, rep.unmatched
    system, _ = assemble_hodge(k, tet_refined, 1, solver="none")
    assert rep.n_minus_one >= system.sigma_space.n
    assert rep.harmonic_dim == 0


def test_large_gamma_clusters(tet_refined):
    gamma = 1e6
    rep = classify_eigenvalues(2, tet_refined, 1, gamma)
    pos = rep.computed[rep.computed > 0]
    assert np.all(pos <= 1 + 1e-8)
    assert np.all(pos >= 1 - 10 / (rep.nu_min * gamma))
