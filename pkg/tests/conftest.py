import numpy as np
import pytest

from mcflow.mesh import SurfaceMesh, sphere_mesh


def flat_triangle(scale=1.0, order=1):
    """Unit right triangle in the z = 0 plane, optionally with midnodes."""
    x = scale * np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    if order == 1:
        return SurfaceMesh(np.array([[0, 1, 2]]), x)
    mid = 0.5 * np.array([x[1] + x[2], x[2] + x[0], x[0] + x[1]])
    return SurfaceMesh(np.array([[0, 1, 2, 3, 4, 5]]), np.vstack((x, mid)), order=2,
                       num_vertices=3)


def flat_patch(n=4, order=1):
    """Structured triangulation of the unit square in the z = 0 plane."""
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack((X.ravel(), Y.ravel(), np.zeros(X.size)))
    idx = lambda i, j: i * (n + 1) + j
    tris = []
    for i in range(n):
        for j in range(n):
            tris.append([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)])
            tris.append([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)])
    mesh = SurfaceMesh(np.array(tris), pts)
    if order == 2:
        from mcflow.mesh import elevate_to_quadratic
        mesh = elevate_to_quadratic(mesh)
    return mesh


@pytest.fixture(scope="session")
def sphere2():
    """Quadratic icosphere of radius 2 with two subdivisions."""
    return sphere_mesh(2, 2.0, order=2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def polynomial_free_history(q, degree, tau):
    """q states at t = tau..q*tau whose fields equal a degree-``degree`` polynomial."""
    from mcflow.flow import FlowHistory, NodalState

    coeffs = np.arange(1, degree + 2, dtype=float)

    def p(t):
        return sum(c * t**i for i, c in enumerate(coeffs))

    states = []
    for j in range(q):
        t = (j + 1) * tau
        x = np.full((2, 3), p(t))
        states.append(NodalState(t, x, x.copy(), x.copy(), np.full(2, p(t))))
    return FlowHistory(states, maxlen=q + 1), p


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(RESULTS):
        ok, detail = RESULTS[criterion]
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
