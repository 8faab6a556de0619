"""Isoparametric surface finite elements: shape functions, quadrature, assembly.

All element loops are vectorised over elements and quadrature points. The
nodal fields use the row layout ``(N, 3)`` for vector fields and ``(N,)``
for scalar fields; component ``l`` of a vector field is column ``l``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import SurfaceMesh

#: smallest admissible area element sqrt(det(J^T J)) before a mesh counts as degenerate
MIN_AREA_ELEMENT = 1e-10


class DegenerateGeometryError(RuntimeError):
    """An element's area element fell below the admissible threshold."""

    def __init__(self, element: int, area_element: float):
        self.element = element
        self.area_element = area_element
        super().__init__(f"degenerate element {element}: area element {area_element:.3e}")


# ---------------------------------------------------------------------------
# reference element


@dataclass(frozen=True)
class ReferenceElement:
    """Lagrange triangle of order 1 or 2 on ``{xi, eta >= 0, xi + eta <= 1}``."""

    order: int

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError(f"unsupported element order {self.order}")

    @property
    def num_local(self) -> int:
        return 3 if self.order == 1 else 6

    @property
    def nodes(self) -> np.ndarray:
        """Reference coordinates of the local nodes."""
        vertices = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
        if self.order == 1:
            return np.array(vertices)
        return np.array(vertices + [[0.5, 0.5], [0.0, 0.5], [0.5, 0.0]])

    def values(self, points: np.ndarray) -> np.ndarray:
        """Shape-function values at reference points, shape (Q, nloc)."""
        p = np.atleast_2d(points)
        l1, l2 = p[:, 0], p[:, 1]
        l0 = 1.0 - l1 - l2
        if self.order == 1:
            return np.column_stack((l0, l1, l2))
        return np.column_stack(
            (
                l0 * (2 * l0 - 1),
                l1 * (2 * l1 - 1),
                l2 * (2 * l2 - 1),
                4 * l1 * l2,
                4 * l2 * l0,
                4 * l0 * l1,
            )
        )

    def gradients(self, points: np.ndarray) -> np.ndarray:
        """Reference gradients ``(d/dxi, d/deta)``, shape (Q, nloc, 2)."""
        p = np.atleast_2d(points)
        nq = len(p)
        if self.order == 1:
            g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
            return np.broadcast_to(g, (nq, 3, 2)).copy()
        l1, l2 = p[:, 0], p[:, 1]
        l0 = 1.0 - l1 - l2
        g = np.empty((nq, 6, 2))
        d0 = -(4 * l0 - 1)
        g[:, 0, 0] = d0
        g[:, 0, 1] = d0
        g[:, 1, 0] = 4 * l1 - 1
        g[:, 1, 1] = 0.0
        g[:, 2, 0] = 0.0
        g[:, 2, 1] = 4 * l2 - 1
        g[:, 3, 0] = 4 * l2
        g[:, 3, 1] = 4 * l1
        g[:, 4, 0] = -4 * l2
        g[:, 4, 1] = 4 * (l0 - l2)
        g[:, 5, 0] = 4 * (l0 - l1)
        g[:, 5, 1] = -4 * l1
        return g


def shape_eval(elem: ReferenceElement, point, tol: float = 1e-12):
    """Values and reference gradients of all local shape functions at one point.

    ``point`` is given in barycentric coordinates ``(l0, l1, l2)``.
    """
    lam = np.asarray(point, dtype=float)
    if lam.shape != (3,):
        raise ValueError("point must be a barycentric triple")
    if abs(lam.sum() - 1.0) > tol or np.any(lam < -tol):
        raise ValueError(f"point {tuple(lam)} lies outside the reference triangle")
    ref = lam[1:][None, :]
    return elem.values(ref)[0], elem.gradients(ref)[0]


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Triangle rule with barycentric points; weights sum to 1/2."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def reference_points(self) -> np.ndarray:
        return self.points[:, 1:]


def _orbit3(a, b):
    return [(a, b, b), (b, a, b), (b, b, a)]


def _orbit6(a, b, c):
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def _rule_table():
    s15 = np.sqrt(15.0)
    table = {
        1: [((1 / 3, 1 / 3, 1 / 3), 1.0)],
        2: [(p, 1 / 3) for p in _orbit3(2 / 3, 1 / 6)],
        3: [((1 / 3, 1 / 3, 1 / 3), -27 / 48)] + [(p, 25 / 48) for p in _orbit3(0.6, 0.2)],
        4: [(p, 0.223381589678011) for p in _orbit3(0.108103018168070, 0.445948490915965)]
        + [(p, 0.109951743655322) for p in _orbit3(0.816847572980459, 0.091576213509771)],
        5: [((1 / 3, 1 / 3, 1 / 3), 9 / 40)]
        + [(p, (155 + s15) / 1200) for p in _orbit3((9 - 2 * s15) / 21, (6 + s15) / 21)]
        + [(p, (155 - s15) / 1200) for p in _orbit3((9 + 2 * s15) / 21, (6 - s15) / 21)],
        6: [(p, 0.116786275726379) for p in _orbit3(0.501426509658179, 0.249286745170910)]
        + [(p, 0.050844906370207) for p in _orbit3(0.873821971016996, 0.063089014491502)]
        + [
            (p, 0.082851075618374)
            for p in _orbit6(0.053145049844817, 0.310352451033784, 0.636502499121399)
        ],
    }
    return table


@lru_cache(maxsize=None)
def quadrature(degree: int) -> QuadratureRule:
    """Symmetric Gauss rule on the reference triangle exact to ``degree`` (1..6)."""
    table = _rule_table()
    if degree not in table:
        raise ValueError(f"no quadrature rule of degree {degree} (supported: 1-6)")
    pts = np.array([p for p, _ in table[degree]], dtype=float)
    w = np.array([w for _, w in table[degree]], dtype=float)
    # tabulated barycentric triples are rounded; renormalise them
    pts /= pts.sum(axis=1, keepdims=True)
    w = 0.5 * w / w.sum()
    pts.flags.writeable = False
    w.flags.writeable = False
    return QuadratureRule(pts, w, degree)


def default_rule(order: int) -> QuadratureRule:
    """Degree ``2k`` rule: 3 points for linear, 6 points for quadratic elements."""
    return quadrature(2 * order)


# ---------------------------------------------------------------------------
# geometry


def element_geometry(mesh: SurfaceMesh, x: np.ndarray, element: int, point):
    """Tangent Jacobian, area element and surface-gradient map at one point.

    Returns
    -------
    J : ndarray, shape (3, 2)
        Tangent vectors ``dX/dxi`` and ``dX/deta``.
    area_element : float
        ``sqrt(det(J^T J))``.
    grad_map : ndarray, shape (3, nloc)
        Column ``i`` is the surface gradient of local basis function ``i``,
        so the surface gradient of a nodal field ``w`` is ``grad_map @ w``.
    """
    elem = ReferenceElement(mesh.order)
    _, dphi = shape_eval(elem, point)
    xe = np.asarray(x).reshape(-1, 3)[mesh.elements[element]]
    J = xe.T @ dphi
    G = J.T @ J
    det = float(np.linalg.det(G))
    if det <= MIN_AREA_ELEMENT**2:
        raise DegenerateGeometryError(element, float(np.sqrt(max(det, 0.0))))
    grad_map = J @ np.linalg.solve(G, dphi.T)
    return J, float(np.sqrt(det)), grad_map


class SurfaceGeometry:
    """Quadrature-point geometry of ``Gamma_h[x]`` for all elements at once.

    Attributes
    ----------
    phi : ndarray, shape (Q, nloc)
        Basis values at quadrature points (same on every element).
    grad : ndarray, shape (E, Q, nloc, 3)
        Surface gradients of the local basis functions.
    jac : ndarray, shape (E, Q, 3, 2)
        Tangent Jacobians.
    area_element : ndarray, shape (E, Q)
    dA : ndarray, shape (E, Q)
        Quadrature weight times area element.
    """

    def __init__(self, mesh: SurfaceMesh, x: np.ndarray, rule: QuadratureRule | None = None,
                 min_area_element: float = MIN_AREA_ELEMENT):
        self.mesh = mesh
        self.rule = rule or default_rule(mesh.order)
        elem = ReferenceElement(mesh.order)
        ref = self.rule.reference_points
        self.phi = elem.values(ref)
        dphi = elem.gradients(ref)
        self.x = np.asarray(x, dtype=float).reshape(-1, 3)
        xe = self.x[mesh.elements]
        jac = np.einsum("eic,qia->eqca", xe, dphi)
        G = np.einsum("eqca,eqcb->eqab", jac, jac)
        det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
        area_element = np.sqrt(np.maximum(det, 0.0))
        worst = np.unravel_index(np.argmin(area_element), area_element.shape)
        if not np.isfinite(det).all() or area_element[worst] < min_area_element:
            raise DegenerateGeometryError(int(worst[0]), float(area_element[worst]))
        inv = np.empty_like(G)
        inv[..., 0, 0] = G[..., 1, 1] / det
        inv[..., 1, 1] = G[..., 0, 0] / det
        inv[..., 0, 1] = -G[..., 0, 1] / det
        inv[..., 1, 0] = -G[..., 1, 0] / det
        # J (J^T J)^{-1} dphi_hat
        pinv = np.einsum("eqca,eqab->eqcb", jac, inv)
        self.grad = np.einsum("eqcb,qib->eqic", pinv, dphi)
        self.jac = jac
        self.area_element = area_element
        self.dA = area_element * self.rule.weights[None, :]

    @property
    def min_area_element(self) -> float:
        return float(self.area_element.min())

    def interpolate(self, nodal: np.ndarray) -> np.ndarray:
        """Nodal field -> values at quadrature points, shape (E, Q, ...)."""
        return np.einsum("qi,ei...->eq...", self.phi, nodal[self.mesh.elements])

    def surface_gradient(self, nodal: np.ndarray) -> np.ndarray:
        """Surface gradient at quadrature points.

        Scalar fields give shape (E, Q, 3); vector fields (N, 3) give
        (E, Q, 3, 3) with row ``l`` the gradient of component ``l``.
        """
        w = nodal[self.mesh.elements]
        if w.ndim == 2:
            return np.einsum("eqid,ei->eqd", self.grad, w)
        return np.einsum("eqid,eil->eqld", self.grad, w)

    def geometric_normal(self) -> np.ndarray:
        """Unit normal of the discrete surface at quadrature points, (E, Q, 3).

        Orientation follows the element ordering, outward for the meshes
        built in :mod:`mcflow.mesh`.
        """
        n = np.cross(self.jac[..., 0], self.jac[..., 1])
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def area(self) -> float:
        return float(self.dA.sum())

    # -- scattering of element contributions ---------------------------------

    def scatter_vector(self, local: np.ndarray) -> np.ndarray:
        """Sum local load vectors (E, nloc[, d]) into a global (N[, d]) array."""
        idx = self.mesh.elements.ravel()
        n = self.mesh.num_nodes
        if local.ndim == 2:
            return np.bincount(idx, weights=local.ravel(), minlength=n)
        d = local.shape[-1]
        flat = local.reshape(-1, d)
        return np.column_stack([np.bincount(idx, weights=flat[:, l], minlength=n) for l in range(d)])

    def load(self, integrand: np.ndarray) -> np.ndarray:
        """Vector of ``int integrand * phi_j`` for a quadrature-point field."""
        if integrand.ndim == 2:
            local = np.einsum("eq,qi,eq->ei", integrand, self.phi, self.dA)
        else:
            local = np.einsum("eql,qi,eq->eil", integrand, self.phi, self.dA)
        return self.scatter_vector(local)

    def gradient_load(self, flux: np.ndarray) -> np.ndarray:
        """Vector of ``int flux . grad phi_j`` for a flux at quadrature points.

        ``flux`` has shape (E, Q, 3) for scalar or (E, Q, d, 3) for
        d-component fields.
        """
        if flux.ndim == 3:
            local = np.einsum("eqd,eqid,eq->ei", flux, self.grad, self.dA)
        else:
            local = np.einsum("eqld,eqid,eq->eil", flux, self.grad, self.dA)
        return self.scatter_vector(local)


# ---------------------------------------------------------------------------
# sparse assembly


class _Pattern:
    """CSR sparsity pattern of a mesh and the scatter map from element entries."""

    def __init__(self, mesh: SurfaceMesh):
        e = mesh.elements
        nloc = e.shape[1]
        n = mesh.num_nodes
        rows = np.repeat(e, nloc, axis=1).ravel()
        cols = np.tile(e, (1, nloc)).ravel()
        keys, self.scatter = np.unique(rows * n + cols, return_inverse=True)
        self.indices = (keys % n).astype(np.int32)
        counts = np.bincount(keys // n, minlength=n)
        self.indptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int32)
        self.shape = (n, n)
        self.nnz = len(keys)

    def matrix(self, local: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.scatter, weights=local.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)


_PATTERNS: dict[int, tuple[SurfaceMesh, _Pattern]] = {}


def sparsity_pattern(mesh: SurfaceMesh) -> _Pattern:
    """Cached CSR pattern for the mesh connectivity."""
    key = id(mesh)
    hit = _PATTERNS.get(key)
    if hit is None or hit[0] is not mesh:
        if len(_PATTERNS) > 16:
            _PATTERNS.clear()
        hit = (mesh, _Pattern(mesh))
        _PATTERNS[key] = hit
    return hit[1]


def _geometry(mesh, x, geom):
    if geom is not None:
        return geom
    return SurfaceGeometry(mesh, mesh.reference_positions if x is None else x)


def assemble_mass(mesh: SurfaceMesh, x: np.ndarray | None = None,
                  geom: SurfaceGeometry | None = None) -> sp.csr_matrix:
    """Mass matrix ``M_ij = int phi_i phi_j`` on ``Gamma_h[x]``."""
    g = _geometry(mesh, x, geom)
    local = np.einsum("qi,qj,eq->eij", g.phi, g.phi, g.dA)
    return sparsity_pattern(mesh).matrix(local)


def assemble_stiffness(mesh: SurfaceMesh, x: np.ndarray | None = None,
                       geom: SurfaceGeometry | None = None) -> sp.csr_matrix:
    """Stiffness matrix ``A_ij = int grad phi_i . grad phi_j`` on ``Gamma_h[x]``."""
    g = _geometry(mesh, x, geom)
    local = np.einsum("eqid,eqjd,eq->eij", g.grad, g.grad, g.dA)
    return sparsity_pattern(mesh).matrix(local)


def assemble_g(mesh: SurfaceMesh, x: np.ndarray | None, nu: np.ndarray, H: np.ndarray,
               geom: SurfaceGeometry | None = None) -> np.ndarray:
    """Right-hand side of the velocity law, shape (N, 3).

    ``g_jl = -int H_h (nu_h)_l phi_j - int grad(H_h (nu_h)_l) . grad phi_j``
    with the product formed pointwise at quadrature points.
    """
    g = _geometry(mesh, x, geom)
    Hq = g.interpolate(H)
    nuq = g.interpolate(nu)
    dH = g.surface_gradient(H)
    dnu = g.surface_gradient(nu)
    prod = Hq[..., None] * nuq
    dprod = nuq[..., :, None] * dH[..., None, :] + Hq[..., None, None] * dnu
    return -(g.load(prod) + g.gradient_load(dprod))


def curvature_density(geom: SurfaceGeometry, nu: np.ndarray) -> np.ndarray:
    """``|grad nu_h|^2`` (Frobenius) at quadrature points, shape (E, Q)."""
    dnu = geom.surface_gradient(nu)
    return np.einsum("eqld,eqld->eq", dnu, dnu)


def assemble_f(mesh: SurfaceMesh, x: np.ndarray | None, nu: np.ndarray, H: np.ndarray,
               geom: SurfaceGeometry | None = None):
    """Nonlinear terms of the normal/curvature equations.

    Returns ``(f1, f2)`` with ``f1`` of shape (N, 3) and ``f2`` of shape (N,):
    ``f1_jl = int a2 (nu_h)_l phi_j`` and ``f2_j = int a2 H_h phi_j`` where
    ``a2 = |grad nu_h|^2``.
    """
    g = _geometry(mesh, x, geom)
    a2 = curvature_density(g, nu)
    f1 = g.load(a2[..., None] * g.interpolate(nu))
    f2 = g.load(a2 * g.interpolate(H))
    return f1, f2


def stabilization_term(mesh: SurfaceMesh, x: np.ndarray | None, nu: np.ndarray, alpha: float,
                       geom: SurfaceGeometry | None = None) -> np.ndarray:
    """``-alpha int (nu_h - n_geo) . phi_j`` per component, shape (N, 3).

    ``n_geo`` is the unit normal of ``Gamma_h[x]`` at the quadrature points.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    n = mesh.num_nodes
    if alpha == 0:
        return np.zeros((n, 3))
    g = _geometry(mesh, x, geom)
    drift = g.interpolate(nu) - g.geometric_normal()
    return -alpha * g.load(drift)


def shifted_sum(M: sp.csr_matrix, A: sp.csr_matrix, c: float) -> sp.csr_matrix:
    """``c * M + A`` computed value-wise on the shared sparsity pattern."""
    same = M.indices is A.indices or (
        M.nnz == A.nnz and np.array_equal(M.indptr, A.indptr) and np.array_equal(M.indices, A.indices)
    )
    if same:
        return sp.csr_matrix((c * M.data + A.data, M.indices, M.indptr), shape=M.shape)
    return (c * M + A).tocsr()
