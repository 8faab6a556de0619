import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import flat_patch, flat_triangle
from mcflow import fem
from mcflow.analysis import implicit_initial_data
from mcflow.mesh import build_icosphere, sphere_mesh, sphere_surface


# -- reference element ------------------------------------------------------


def test_p1_lagrange_at_vertex():
    vals, _ = fem.shape_eval(fem.ReferenceElement(1), (0.0, 1.0, 0.0))
    np.testing.assert_allclose(vals, [0, 1, 0], atol=1e-15)


def test_p2_vertex_function_at_centroid():
    vals, _ = fem.shape_eval(fem.ReferenceElement(2), (1 / 3, 1 / 3, 1 / 3))
    np.testing.assert_allclose(vals[:3], -1 / 9, atol=1e-15)
    assert vals.sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("order", [1, 2])
def test_lagrange_property(order):
    elem = fem.ReferenceElement(order)
    np.testing.assert_allclose(elem.values(elem.nodes), np.eye(elem.num_local), atol=1e-15)


def test_p2_midnode_value():
    vals, _ = fem.shape_eval(fem.ReferenceElement(2), (0.0, 0.5, 0.5))
    np.testing.assert_allclose(vals, [0, 0, 0, 1, 0, 0], atol=1e-15)


def test_shape_eval_rejects_outside_point():
    with pytest.raises(ValueError, match="outside"):
        fem.shape_eval(fem.ReferenceElement(1), (1.2, -0.2, 0.0))


@pytest.mark.parametrize("order", [1, 2])
def test_reference_gradients_match_symbolic(order):
    xi, eta = sympy.symbols("xi eta")
    l0, l1, l2 = 1 - xi - eta, xi, eta
    if order == 1:
        funcs = [l0, l1, l2]
    else:
        funcs = [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                 4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1]
    pts = np.array([[0.2, 0.3], [0.6, 0.1], [0.0, 0.0]])
    got = fem.ReferenceElement(order).gradients(pts)
    for i, f in enumerate(funcs):
        for a, var in enumerate((xi, eta)):
            d = sympy.lambdify((xi, eta), sympy.diff(f, var))
            np.testing.assert_allclose(got[:, i, a], [float(d(*p)) for p in pts], atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_partition_of_unity(a, b):
    if a + b > 1:
        a, b = 1 - a, 1 - b
    for order in (1, 2):
        elem = fem.ReferenceElement(order)
        vals = elem.values(np.array([[a, b]]))
        grads = elem.gradients(np.array([[a, b]]))
        assert vals.sum() == pytest.approx(1.0, abs=1e-14)
        np.testing.assert_allclose(grads.sum(axis=1), 0.0, atol=1e-13)


# -- quadrature -------------------------------------------------------------


def test_degree_one_rule():
    rule = fem.quadrature(1)
    np.testing.assert_allclose(rule.points, [[1 / 3, 1 / 3, 1 / 3]])
    np.testing.assert_allclose(rule.weights, [0.5])


def test_degree_two_rule():
    rule = fem.quadrature(2)
    assert len(rule.weights) == 3
    np.testing.assert_allclose(rule.weights, 1 / 6, atol=1e-16)


@pytest.mark.parametrize("degree", range(1, 7))
def test_quadrature_exactness(degree):
    rule = fem.quadrature(degree)
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-15)
    xi, eta = sympy.symbols("xi eta")
    ref = rule.reference_points
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = sympy.integrate(sympy.integrate(xi**a * eta**b, (eta, 0, 1 - xi)), (xi, 0, 1))
            approx = float(np.sum(rule.weights * ref[:, 0] ** a * ref[:, 1] ** b))
            assert approx == pytest.approx(float(exact), abs=1e-13)


def test_quadrature_unsupported_degree():
    with pytest.raises(ValueError, match="degree 7"):
        fem.quadrature(7)


# -- geometry ---------------------------------------------------------------


def test_flat_element_geometry():
    mesh = flat_triangle()
    J, ae, grad_map = fem.element_geometry(mesh, mesh.reference_positions, 0, (1 / 3, 1 / 3, 1 / 3))
    assert ae == pytest.approx(1.0)
    w = mesh.reference_positions[:, 0]
    np.testing.assert_allclose(grad_map @ w, [1, 0, 0], atol=1e-15)
    # identity field: the surface gradient reproduces the tangent plane projector
    P = grad_map @ mesh.reference_positions
    np.testing.assert_allclose(P @ J, J, atol=1e-14)


@pytest.mark.parametrize("s", [0.5, 3.0])
def test_area_element_scales(s):
    mesh = flat_triangle(s)
    _, ae, _ = fem.element_geometry(mesh, mesh.reference_positions, 0, (0.2, 0.3, 0.5))
    assert ae == pytest.approx(s * s)


def test_degenerate_element_flagged():
    mesh = flat_triangle()
    x = np.array(mesh.reference_positions)
    x[2] = x[1]
    with pytest.raises(fem.DegenerateGeometryError):
        fem.element_geometry(mesh, x, 0, (1 / 3, 1 / 3, 1 / 3))
    with pytest.raises(fem.DegenerateGeometryError):
        fem.SurfaceGeometry(mesh, x)


def test_element_geometry_matches_vectorised(sphere2):
    geom = fem.SurfaceGeometry(sphere2, sphere2.reference_positions)
    e, q = 7, 2
    lam = geom.rule.points[q]
    _, ae, grad_map = fem.element_geometry(sphere2, sphere2.reference_positions, e, lam)
    assert ae == pytest.approx(geom.area_element[e, q], rel=1e-13)
    np.testing.assert_allclose(grad_map.T, geom.grad[e, q], atol=1e-12)


def test_quadratic_geometry_error_order():
    # total area of a radius-2 sphere converges like h^4 for quadratic elements
    errs = [abs(fem.SurfaceGeometry(m, m.reference_positions).area() - 16 * np.pi)
            for m in (sphere_mesh(s, 2.0) for s in (1, 2, 3))]
    rates = [np.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(rates) > 3.5


# -- matrices ---------------------------------------------------------------


def test_p1_mass_closed_form():
    mesh = flat_triangle()
    M = fem.assemble_mass(mesh).toarray()
    expected = 0.5 / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]])
    np.testing.assert_allclose(M, expected, atol=1e-15)


def test_p1_stiffness_closed_form():
    mesh = flat_triangle()
    A = fem.assemble_stiffness(mesh).toarray()
    expected = np.array([[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]])
    np.testing.assert_allclose(A, expected, atol=1e-15)


def test_p2_mass_closed_form():
    # classical P2 mass matrix on a triangle of area |T|, scaled by 1/180
    mesh = flat_triangle(order=2)
    M = fem.assemble_mass(mesh).toarray()
    vv = np.array([[6, -1, -1], [-1, 6, -1], [-1, -1, 6]])
    vm = np.array([[-4, 0, 0], [0, -4, 0], [0, 0, -4]])  # vertex i vs opposite midnode
    mm = np.array([[32, 16, 16], [16, 32, 16], [16, 16, 32]])
    expected = np.block([[vv, vm], [vm.T, mm]]) * 0.5 / 180
    np.testing.assert_allclose(M, expected, atol=1e-15)


def test_mass_row_sum_is_area(sphere2):
    M = fem.assemble_mass(sphere2)
    geom = fem.SurfaceGeometry(sphere2, sphere2.reference_positions)
    assert M.sum() == pytest.approx(geom.area(), rel=1e-14)


def test_icosphere_mass_total_close_to_sphere_area():
    mesh = sphere_mesh(3, 2.0)
    gap = abs(fem.assemble_mass(mesh).sum() - 16 * np.pi) / (16 * np.pi)
    assert gap < 1e-4


def test_matrices_symmetric_and_stiffness_kernel(sphere2):
    M = fem.assemble_mass(sphere2)
    A = fem.assemble_stiffness(sphere2)
    assert abs(M - M.T).max() == 0.0
    assert abs(A - A.T).max() == 0.0
    assert np.abs(A @ np.ones(sphere2.num_nodes)).max() <= 1e-12 * abs(A).max()


def test_stiffness_scale_invariant(sphere2):
    A1 = fem.assemble_stiffness(sphere2).toarray()
    A2 = fem.assemble_stiffness(sphere2, 3.7 * sphere2.reference_positions).toarray()
    np.testing.assert_allclose(A2, A1, atol=1e-12 * np.abs(A1).max())


def test_assembly_is_deterministic(sphere2):
    a = fem.assemble_stiffness(sphere2)
    b = fem.assemble_stiffness(sphere2)
    assert np.array_equal(a.data, b.data)


def test_shifted_sum(sphere2):
    M = fem.assemble_mass(sphere2)
    A = fem.assemble_stiffness(sphere2)
    S = fem.shifted_sum(M, A, 2.5)
    np.testing.assert_allclose(S.toarray(), (2.5 * M + A).toarray(), atol=1e-14)
    assert S.nnz == M.nnz


# -- nonlinear vectors ------------------------------------------------------


def test_g_zero_for_zero_curvature(sphere2):
    n = sphere2.num_nodes
    g = fem.assemble_g(sphere2, None, np.ones((n, 3)), np.zeros(n))
    assert np.all(g == 0)


def test_g_flat_constant_normal():
    mesh = flat_patch(3, order=2)
    n = mesh.num_nodes
    nu = np.tile([0.0, 0.0, 1.0], (n, 1))
    c = 1.7
    g = fem.assemble_g(mesh, None, nu, np.full(n, c))
    M = fem.assemble_mass(mesh)
    np.testing.assert_allclose(g[:, 2], -c * (M @ np.ones(n)), atol=1e-15)
    np.testing.assert_allclose(g[:, :2], 0.0, atol=1e-15)


def test_g_equals_minus_k_times_fe_field(sphere2):
    # when H nu lies in the FE space, g = -K (H nu)
    n = sphere2.num_nodes
    nu = sphere2.reference_positions / 2.0
    H = np.ones(n)
    g = fem.assemble_g(sphere2, None, nu, H)
    K = fem.assemble_mass(sphere2) + fem.assemble_stiffness(sphere2)
    np.testing.assert_allclose(g, -(K @ nu), atol=1e-13)


def test_f_vanishes_for_constant_normal():
    mesh = flat_patch(3)
    n = mesh.num_nodes
    f1, f2 = fem.assemble_f(mesh, None, np.tile([0.0, 0, 1], (n, 1)), np.ones(n))
    assert np.all(f1 == 0) and np.all(f2 == 0)


def test_curvature_density_exact_on_sphere():
    # nu_h = x_h / R, and the surface gradient of x_h is the tangential projector
    R = 2.0
    for s in (1, 2):
        mesh = sphere_mesh(s, R)
        nu, _ = implicit_initial_data(sphere_surface(R), mesh)
        geom = fem.SurfaceGeometry(mesh, mesh.reference_positions)
        np.testing.assert_allclose(fem.curvature_density(geom, nu), 2 / R**2, atol=1e-13)


def test_f2_total_on_sphere():
    R = 2.0
    mesh = sphere_mesh(3, R)
    nu, H = implicit_initial_data(sphere_surface(R), mesh)
    _, f2 = fem.assemble_f(mesh, None, nu, H)
    assert f2.sum() == pytest.approx(4 / R**3 * 4 * np.pi * R**2, rel=1e-3)


def test_stabilization_examples():
    mesh = flat_patch(3, order=2)
    n = mesh.num_nodes
    e3 = np.tile([0.0, 0, 1], (n, 1))
    assert np.all(fem.stabilization_term(mesh, None, e3, 0.0) == 0)
    np.testing.assert_allclose(fem.stabilization_term(mesh, None, e3, 2.0), 0.0, atol=1e-15)
    eps, alpha = 1e-3, 2.0
    tilted = e3 + np.array([eps, 0, 0])
    s = fem.stabilization_term(mesh, None, tilted, alpha)
    M = fem.assemble_mass(mesh)
    np.testing.assert_allclose(s[:, 0], -alpha * eps * (M @ np.ones(n)), atol=1e-15)
    np.testing.assert_allclose(s[:, 1:], 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        fem.stabilization_term(mesh, None, e3, -1.0)


def test_geometric_normal_outward_on_icosphere():
    mesh = build_icosphere(2)
    geom = fem.SurfaceGeometry(mesh, mesh.reference_positions)
    y = geom.interpolate(mesh.reference_positions)
    assert np.all(np.einsum("eqc,eqc->eq", geom.geometric_normal(), y) > 0)
