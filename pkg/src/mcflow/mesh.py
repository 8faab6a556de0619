"""Closed triangulated surface meshes of order 1 and 2.

Meshes are generated from the icosahedron, optionally pushed onto an
implicitly defined surface with a gradient-Newton projection, and elevated
to isoparametric quadratic elements by inserting one node per edge.

Local node ordering of a quadratic element is ``(v0, v1, v2, m12, m20, m01)``:
the three vertices followed by the midnodes of the edges opposite to
vertex 0, 1 and 2.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

# local (a, b) vertex pairs of the edges carrying midnodes 3, 4, 5
LOCAL_EDGES = ((1, 2), (2, 0), (0, 1))


class ProjectionError(RuntimeError):
    """Raised when the Newton projection onto a level set does not converge."""

    def __init__(self, node: int, residual: float, iterations: int):
        self.node = node
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"projection of node {node} did not converge after {iterations} "
            f"iterations (|d| = {residual:.3e})"
        )


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Connectivity and reference node positions of a closed surface mesh.

    Parameters
    ----------
    elements : ndarray of int, shape (E, 3) or (E, 6)
        Per-element node indices, vertices first.
    reference_positions : ndarray, shape (N, 3)
        Initial nodal positions.
    order : {1, 2}
        Polynomial degree of the isoparametric elements.
    num_vertices : int
        Number of corner nodes. Corner nodes are numbered first.
    """

    elements: np.ndarray
    reference_positions: np.ndarray
    order: int = 1
    num_vertices: int = field(default=-1)

    def __post_init__(self):
        elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        positions = np.ascontiguousarray(self.reference_positions, dtype=float)
        if self.order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {self.order}")
        nloc = 3 if self.order == 1 else 6
        if elements.ndim != 2 or elements.shape[1] != nloc:
            raise ValueError(f"order-{self.order} elements need {nloc} nodes each")
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise ValueError("reference_positions must have shape (N, 3)")
        if elements.size and (elements.min() < 0 or elements.max() >= len(positions)):
            raise ValueError("element index out of range")
        elements.flags.writeable = False
        positions.flags.writeable = False
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "reference_positions", positions)
        if self.num_vertices < 0:
            nv = len(positions) if self.order == 1 else int(elements[:, :3].max()) + 1
            object.__setattr__(self, "num_vertices", nv)

    @property
    def num_nodes(self) -> int:
        return len(self.reference_positions)

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    @property
    def triangles(self) -> np.ndarray:
        """Corner-vertex triangles, shape (E, 3)."""
        return self.elements[:, :3]

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges (sorted pairs) of the corner triangulation."""
        return unique_edges(self.triangles)

    def with_positions(self, positions: np.ndarray) -> "SurfaceMesh":
        """Same connectivity, new reference positions."""
        return SurfaceMesh(self.elements, positions, self.order, self.num_vertices)

    def flat_triangles(self) -> np.ndarray:
        """Flat triangles for export: quadratic elements split into four."""
        if self.order == 1:
            return np.asarray(self.elements)
        e = self.elements
        sub = [
            e[:, [0, 5, 4]],
            e[:, [5, 1, 3]],
            e[:, [4, 3, 2]],
            e[:, [3, 4, 5]],
        ]
        return np.stack(sub, axis=1).reshape(-1, 3)


@dataclass(frozen=True)
class ImplicitSurface:
    """Zero level set of a smooth function with analytic derivatives.

    All callables act row-wise on arrays of shape (n, 3); ``hessian``
    returns shape (n, 3, 3).
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    name: str = "implicit"


def sphere_surface(radius: float = 1.0) -> ImplicitSurface:
    """Signed distance ``|x| - radius`` of a sphere centred at the origin."""

    def value(x):
        return np.linalg.norm(x, axis=-1) - radius

    def gradient(x):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        return x / r

    def hessian(x):
        r = np.linalg.norm(x, axis=-1)
        n = x / r[:, None]
        eye = np.broadcast_to(np.eye(3), (len(x), 3, 3))
        return (eye - n[:, :, None] * n[:, None, :]) / r[:, None, None]

    return ImplicitSurface(value, gradient, hessian, name=f"sphere(R={radius:g})")


def _dumbbell_G(s):
    return 2.0 * s * (s - 199.0 / 200.0)


def _dumbbell_dG(s):
    return 4.0 * s - 199.0 / 100.0


def dumbbell_surface() -> ImplicitSurface:
    """Dumbbell ``x1^2 + x2^2 + G(x3^2) - 0.04`` with ``G(s) = 2s(s - 199/200)``."""

    def value(x):
        z2 = x[:, 2] ** 2
        return x[:, 0] ** 2 + x[:, 1] ** 2 + _dumbbell_G(z2) - 0.04

    def gradient(x):
        z = x[:, 2]
        return np.column_stack((2 * x[:, 0], 2 * x[:, 1], 2 * z * _dumbbell_dG(z * z)))

    def hessian(x):
        z = x[:, 2]
        out = np.zeros((len(x), 3, 3))
        out[:, 0, 0] = 2.0
        out[:, 1, 1] = 2.0
        # d/dz [2 z G'(z^2)] = 2 G'(z^2) + 4 z^2 G''(z^2), G'' = 4
        out[:, 2, 2] = 2 * _dumbbell_dG(z * z) + 16.0 * z * z
        return out

    return ImplicitSurface(value, gradient, hessian, name="dumbbell")


def dumbbell_extents() -> tuple[float, float]:
    """Half extents ``(r_max, z_max)`` of the dumbbell's bounding box."""
    # radial extent: max over s of 0.04 - G(s), attained at G'(s) = 0
    s_star = 199.0 / 400.0
    r_max = float(np.sqrt(0.04 - _dumbbell_G(s_star)))
    # axial extent: positive root of 0.04 - 2 z^4 + 1.99 z^2 = 0
    roots = np.roots([-2.0, 0.0, 1.99, 0.0, 0.04])
    real = roots[np.abs(roots.imag) < 1e-12].real
    z_max = float(real[real > 0].max())
    return r_max, z_max


def unique_edges(triangles: np.ndarray) -> np.ndarray:
    """Sorted unique vertex pairs of a triangle list."""
    tri = np.asarray(triangles)
    pairs = np.concatenate([tri[:, [a, b]] for a, b in LOCAL_EDGES])
    pairs.sort(axis=1)
    return np.unique(pairs, axis=0)


def _icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return verts / np.linalg.norm(verts, axis=1, keepdims=True), faces


def _edge_lookup(num_vertices: int, edges: np.ndarray):
    keys = edges[:, 0] * num_vertices + edges[:, 1]

    def index(a, b):
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        return np.searchsorted(keys, lo * num_vertices + hi)

    return index


def _subdivide(verts: np.ndarray, faces: np.ndarray):
    nv = len(verts)
    edges = unique_edges(faces)
    index = _edge_lookup(nv, edges)
    mid = 0.5 * (verts[edges[:, 0]] + verts[edges[:, 1]])
    m12 = nv + index(faces[:, 1], faces[:, 2])
    m20 = nv + index(faces[:, 2], faces[:, 0])
    m01 = nv + index(faces[:, 0], faces[:, 1])
    a, b, c = faces.T
    new_faces = np.stack(
        [
            np.column_stack((a, m01, m20)),
            np.column_stack((m01, b, m12)),
            np.column_stack((m20, m12, c)),
            np.column_stack((m12, m20, m01)),
        ],
        axis=1,
    ).reshape(-1, 3)
    return np.vstack((verts, mid)), new_faces


def build_icosphere(subdivisions: int, radius: float = 1.0) -> SurfaceMesh:
    """Flat triangulation of a sphere by repeated 4-to-1 icosahedron refinement.

    The mesh has ``10 * 4**subdivisions + 2`` vertices and
    ``20 * 4**subdivisions`` outward-oriented triangles, all vertices lying
    exactly on the sphere of the given radius.
    """
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    if radius <= 0:
        raise ValueError("radius must be positive")
    verts, faces = _icosahedron()
    for _ in range(subdivisions):
        verts, faces = _subdivide(verts, faces)
        verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    return SurfaceMesh(faces, radius * verts, order=1)


def project_points(
    points: np.ndarray,
    surf: ImplicitSurface,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> np.ndarray:
    """Gradient-Newton projection ``x <- x - d(x) grad d(x) / |grad d(x)|^2``."""
    x = np.array(points, dtype=float, copy=True)
    active = np.arange(len(x))
    for _ in range(max_iter):
        d = surf.value(x[active])
        done = np.abs(d) <= tol
        active = active[~done]
        if active.size == 0:
            return x
        d = d[~done]
        g = surf.gradient(x[active])
        x[active] -= (d / np.einsum("ij,ij->i", g, g))[:, None] * g
    d = surf.value(x[active])
    bad = np.abs(d) > tol
    if np.any(bad):
        worst = int(np.argmax(np.abs(d)))
        raise ProjectionError(int(active[worst]), float(abs(d[worst])), max_iter)
    return x


def project_to_implicit(
    mesh: SurfaceMesh,
    surf: ImplicitSurface,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> SurfaceMesh:
    """Move every node onto ``{d = 0}`` keeping the connectivity."""
    return mesh.with_positions(project_points(mesh.reference_positions, surf, tol, max_iter))


def elevate_to_quadratic(mesh: SurfaceMesh, surf: Optional[ImplicitSurface] = None) -> SurfaceMesh:
    """Insert one node per edge and return the order-2 mesh.

    Midnodes start at the edge midpoints and are projected onto ``surf``
    when it is given, so the quadratic surface interpolates it at all nodes.
    """
    if mesh.order != 1:
        raise ValueError("elevate_to_quadratic expects an order-1 mesh")
    nv = mesh.num_nodes
    tri = mesh.elements
    edges = mesh.edges
    index = _edge_lookup(nv, edges)
    x = mesh.reference_positions
    mid = 0.5 * (x[edges[:, 0]] + x[edges[:, 1]])
    if surf is not None:
        mid = project_points(mid, surf)
    extra = [nv + index(tri[:, a], tri[:, b]) for a, b in LOCAL_EDGES]
    elements = np.column_stack([tri] + extra)
    return SurfaceMesh(elements, np.vstack((x, mid)), order=2, num_vertices=nv)


def sphere_mesh(subdivisions: int, radius: float = 1.0, order: int = 2) -> SurfaceMesh:
    """Icosphere of the given radius, elevated to ``order`` with exact nodes."""
    mesh = build_icosphere(subdivisions, radius)
    if order == 2:
        mesh = elevate_to_quadratic(mesh, sphere_surface(radius))
    return mesh


def relax_on_surface(mesh: SurfaceMesh, surf: ImplicitSurface, sweeps: int,
                     weight: float = 0.5, tol: float = 1e-12) -> SurfaceMesh:
    """Damped umbrella smoothing of the vertices, reprojecting after every sweep.

    Each sweep moves every vertex a fraction ``weight`` towards the mean of
    its edge neighbours and projects it back onto ``{d = 0}``.
    """
    if mesh.order != 1:
        raise ValueError("relax_on_surface expects an order-1 mesh")
    if sweeps < 0 or not 0 < weight <= 1:
        raise ValueError("need sweeps >= 0 and 0 < weight <= 1")
    n = mesh.num_nodes
    e = mesh.edges
    adj = sp.coo_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                        shape=(n, n)).tocsr()
    degree = np.asarray(adj.sum(axis=1)).ravel()[:, None]
    x = np.array(mesh.reference_positions)
    for _ in range(sweeps):
        x = project_points((1 - weight) * x + weight * (adj @ x) / degree, surf, tol)
    return mesh.with_positions(x)


DUMBBELL_RELAX_SWEEPS = 20


def dumbbell_mesh(subdivisions: int, order: int = 2, tol: float = 1e-12,
                  relax_sweeps: int = DUMBBELL_RELAX_SWEEPS) -> SurfaceMesh:
    """Icosphere scaled to the dumbbell's bounding box and projected onto it.

    The projection squeezes elements near the neck; ``relax_sweeps`` rounds
    of :func:`relax_on_surface` even them out before elevation.
    """
    r_max, z_max = dumbbell_extents()
    surf = dumbbell_surface()
    base = build_icosphere(subdivisions, 1.0)
    scaled = base.reference_positions * np.array([r_max, r_max, z_max])
    mesh = project_to_implicit(base.with_positions(scaled), surf, tol)
    mesh = relax_on_surface(mesh, surf, relax_sweeps, tol=tol)
    if order == 2:
        mesh = elevate_to_quadratic(mesh, surf)
    return mesh


def mesh_width(mesh: SurfaceMesh, x: Optional[np.ndarray] = None) -> float:
    """Largest distance between two vertices of one element."""
    x = mesh.reference_positions if x is None else np.asarray(x).reshape(-1, 3)
    p = x[mesh.triangles]
    lengths = [np.linalg.norm(p[:, a] - p[:, b], axis=1) for a, b in LOCAL_EDGES]
    return float(np.max(lengths)) if mesh.num_elements else 0.0


def check_closed(mesh: SurfaceMesh) -> None:
    """Raise ``ValueError`` unless the mesh is closed and consistently oriented.

    Every directed corner edge must occur exactly once and its reverse
    exactly once; every node must belong to some element.
    """
    tri = mesh.triangles
    directed = np.concatenate([tri[:, [a, b]] for a, b in ((0, 1), (1, 2), (2, 0))])
    uniq, counts = np.unique(directed, axis=0, return_counts=True)
    if np.any(counts != 1):
        raise ValueError("inconsistent orientation: directed edge used twice")
    keys = set(map(tuple, uniq.tolist()))
    for a, b in keys:
        if (b, a) not in keys:
            raise ValueError(f"open edge ({a}, {b})")
    used = np.zeros(mesh.num_nodes, dtype=bool)
    used[mesh.elements.ravel()] = True
    if not used.all():
        raise ValueError(f"node {int(np.argmin(used))} belongs to no element")
    if mesh.order == 2:
        ne = len(mesh.edges)
        if mesh.num_nodes != mesh.num_vertices + ne:
            raise ValueError("quadratic mesh must carry exactly one node per edge")
