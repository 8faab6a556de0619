"""Mean curvature flow of closed surfaces by evolving surface finite elements.

The flow is discretised by isoparametric finite elements on the moving
surface mesh, evolving the normal vector and the mean curvature alongside
the positions, and integrated in time by linearly implicit BDF methods.
"""
from .analysis import SphereSolution, convergence_study, eoc_table, run_sphere, sphere_exact
from .fem import (
    ReferenceElement,
    SurfaceGeometry,
    assemble_f,
    assemble_g,
    assemble_mass,
    assemble_stiffness,
    quadrature,
)
from .flow import (
    SCHEMES,
    FlowConfig,
    NodalState,
    bdf_coefficients,
    initial_state,
    run_flow,
)
from .linalg import CgConfig, cg_solve, multi_rhs_solve
from .mesh import (
    ImplicitSurface,
    SurfaceMesh,
    build_icosphere,
    dumbbell_mesh,
    dumbbell_surface,
    elevate_to_quadratic,
    mesh_width,
    project_to_implicit,
    sphere_mesh,
    sphere_surface,
)

__version__ = "0.1.0"

__all__ = [
    "SCHEMES", "CgConfig", "FlowConfig", "ImplicitSurface", "NodalState", "ReferenceElement",
    "SphereSolution", "SurfaceGeometry", "SurfaceMesh", "assemble_f", "assemble_g",
    "assemble_mass", "assemble_stiffness", "bdf_coefficients", "build_icosphere", "cg_solve",
    "convergence_study", "dumbbell_mesh", "dumbbell_surface", "elevate_to_quadratic",
    "eoc_table", "initial_state", "mesh_width", "multi_rhs_solve", "project_to_implicit",
    "quadrature", "run_flow", "run_sphere", "sphere_exact", "sphere_mesh", "sphere_surface",
]
