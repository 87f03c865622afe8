"""Finite element spaces, quadrature, assembly kernels and boundary data."""

import numpy as np
import pytest

from poroflow import physics
from poroflow.linalg import solve
from poroflow.mesh import build_q5spot_mesh, build_rect_mesh
from poroflow.spatial import (
    BoundaryConditions,
    apply_dirichlet,
    energy_integral,
    evaluate_at_points,
    evaluate_at_quadrature,
    fe_space,
    interpolate,
    l2_error,
    l2_norm,
    load_vector,
    mass_matrix,
    quadrature_integral,
    stiffness_matrix,
)


def test_dof_counts():
    mesh = build_rect_mesh(1.0, 1.0, 4, 4)
    assert fe_space(mesh, 1).n_dofs == 25
    assert fe_space(mesh, 2).n_dofs == 81
    mesh64 = build_rect_mesh(1.0, 1.0, 64, 64)
    assert fe_space(mesh64, 1).n_dofs == 65 * 65
    assert build_q5spot_mesh(38).cells.shape[0] == 1436
    assert fe_space(build_q5spot_mesh(38), 2).n_dofs == 5897


def test_quadrature_measures_area():
    space = fe_space(build_rect_mesh(1.0, 1.0, 8, 8), 1)
    ones = np.ones((space.mesh.cells.shape[0], 9))
    assert quadrature_integral(space, ones) == pytest.approx(1.0, rel=1e-13)
    space_q5 = fe_space(build_q5spot_mesh(20), 1)
    ones = np.ones((space_q5.mesh.cells.shape[0], 9))
    assert quadrature_integral(space_q5, ones) == pytest.approx(
        100.0 ** 2 - 2 * 5.0 ** 2, rel=1e-12)


@pytest.mark.parametrize("degree", [1, 2])
def test_interpolation_reproduces_polynomials(degree):
    space = fe_space(build_rect_mesh(1.0, 1.0, 5, 4), degree)
    if degree == 1:
        fn = lambda x, y, t: 2.0 + 3.0 * x - 1.5 * y + 0.5 * x * y
    else:
        fn = lambda x, y, t: 1.0 + x * x * y - 2.0 * y * y + x * y * x * y
    dofs = interpolate(space, fn, 0.0)
    assert l2_error(space, dofs, fn, 0.0) < 1e-13


@pytest.mark.parametrize("degree", [1, 2])
def test_interpolation_error_order(degree):
    # smooth non-polynomial field: L2 interpolation error = O(h^(degree+1))
    fn = lambda x, y, t: np.sin(2.1 * x) * np.cos(1.7 * y)
    errs = []
    for n in (4, 8, 16):
        space = fe_space(build_rect_mesh(1.0, 1.0, n, n), degree)
        errs.append(l2_error(space, interpolate(space, fn, 0.0), fn, 0.0))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > degree + 1 - 0.2)


def test_l2_norm_of_constant():
    space = fe_space(build_rect_mesh(1.0, 1.0, 6, 6), 1)
    c = np.full(space.n_dofs, 3.0)
    assert l2_norm(space, c) == pytest.approx(3.0, rel=1e-13)
    assert l2_error(space, c, lambda x, y, t: 0.0, 0.0) == pytest.approx(
        3.0, rel=1e-13)


def test_energy_integral_uniform_field():
    model = physics.mms_fluid_model()
    space = fe_space(build_rect_mesh(1.0, 1.0, 8, 8), 1)
    e = energy_integral(space, model, np.full(space.n_dofs, 0.5))
    expected = 0.2 * physics.free_energy_density(model.energy, 0.5)
    assert e == pytest.approx(expected, rel=1e-13)
    assert e == pytest.approx(-0.23162721043367843, rel=1e-12)


def test_energy_integral_requires_energy_model():
    model = physics.q5spot_fluid_model()
    space = fe_space(build_rect_mesh(1.0, 1.0, 2, 2), 1)
    with pytest.raises(ValueError):
        energy_integral(space, model, np.full(space.n_dofs, 0.5))


def test_divergence_theorem_on_boundary():
    # integral of (x, y) . n over the boundary equals 2 * area
    space = fe_space(build_rect_mesh(1.0, 1.0, 7, 5), 2)
    total = 0.0
    for e in range(len(space.mesh.boundary_edge_tags)):
        xq = space.be_X[e]
        nrm = space.be_normal[e]
        total += np.sum(space.be_w[e] * (xq[:, 0] * nrm[0] + xq[:, 1] * nrm[1]))
    assert total == pytest.approx(2.0, rel=1e-12)


@pytest.mark.parametrize("degree", [1, 2])
def test_laplace_patch_test(degree):
    # -div(grad u) = 0 with u linear (or quadratic harmonic for degree 2)
    # imposed on the boundary is reproduced exactly
    if degree == 1:
        exact = lambda x, y, t: 1.0 + 2.0 * x - 3.0 * y
    else:
        exact = lambda x, y, t: x * x - y * y + x * y
    mesh = build_rect_mesh(1.0, 1.0, 4, 3)
    space = fe_space(mesh, degree)
    ncells = mesh.cells.shape[0]
    a = stiffness_matrix(space, np.ones((ncells, 9)))
    b = np.zeros(space.n_dofs)
    bdofs = space.dirichlet_dofs(["dirichlet"])
    vals_d = interpolate(space, exact, 0.0)[bdofs]
    a, b = apply_dirichlet(a, b, bdofs, vals_d)
    u, _ = solve(a, b)
    assert l2_error(space, u, exact, 0.0) < 1e-11


def test_apply_dirichlet_keeps_symmetry():
    space = fe_space(build_rect_mesh(1.0, 1.0, 4, 4), 1)
    ncells = space.mesh.cells.shape[0]
    a = stiffness_matrix(space, np.ones((ncells, 9)))
    b = np.ones(space.n_dofs)
    bdofs = space.dirichlet_dofs(["dirichlet"])
    a2, _ = apply_dirichlet(a, b, bdofs, np.zeros(bdofs.size))
    d = (a2 - a2.T).toarray()
    assert np.max(np.abs(d)) < 1e-14
    # eliminated rows reduce to the identity
    diag = a2.toarray()[bdofs][:, bdofs]
    assert np.allclose(np.diag(np.diag(diag)), diag)


def test_mass_matrix_integrates_one():
    space = fe_space(build_rect_mesh(1.0, 1.0, 5, 5), 2)
    ncells = space.mesh.cells.shape[0]
    m = mass_matrix(space, np.ones((ncells, 9)))
    ones = np.ones(space.n_dofs)
    assert ones @ (m @ ones) == pytest.approx(1.0, rel=1e-12)


def test_load_vector_total_source():
    space = fe_space(build_rect_mesh(1.0, 1.0, 6, 6), 1)
    b = load_vector(space, lambda x, y, t: x + 2 * y, 0.0)
    # sum over test functions = integral of the source (partition of unity)
    assert float(np.sum(b)) == pytest.approx(1.5, rel=1e-12)


def test_evaluate_at_quadrature_matches_callable():
    space = fe_space(build_rect_mesh(1.0, 1.0, 4, 4), 2)
    fn = lambda x, y, t: x * y + y * y
    dofs = interpolate(space, fn, 0.0)
    vals, grads = evaluate_at_quadrature(space, dofs)
    xq = space.X
    assert np.allclose(vals, fn(xq[..., 0], xq[..., 1], 0.0), atol=1e-13)
    assert np.allclose(grads[..., 0], xq[..., 1], atol=1e-12)
    assert np.allclose(grads[..., 1], xq[..., 0] + 2 * xq[..., 1], atol=1e-12)


def test_evaluate_at_points_inside_and_outside():
    space = fe_space(build_q5spot_mesh(20), 1)
    fn = lambda x, y, t: 0.01 * x + 0.02 * y
    dofs = interpolate(space, fn, 0.0)
    pts = np.array([[50.0, 50.0], [2.0, 2.0], [98.0, 98.0], [10.0, 90.0]])
    vals = evaluate_at_points(space, dofs, pts)
    assert vals[0] == pytest.approx(1.5, rel=1e-12)
    assert np.isnan(vals[1])  # origin cutout
    assert np.isnan(vals[2])  # far cutout
    assert vals[3] == pytest.approx(1.9, rel=1e-12)


def test_boundary_dofs_per_tag():
    space = fe_space(build_rect_mesh(1.0, 1.0, 4, 4), 2)
    # 16 boundary edges, degree 2: 16 vertex + 16 midside dofs
    bdofs = space.dirichlet_dofs(["dirichlet"])
    assert bdofs.size == 32
    coords = space.dof_coords[bdofs]
    on_edge = (np.isclose(coords[:, 0], 0) | np.isclose(coords[:, 0], 1)
               | np.isclose(coords[:, 1], 0) | np.isclose(coords[:, 1], 1))
    assert np.all(on_edge)
