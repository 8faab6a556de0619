"""Shrink a sphere under mean curvature flow and compare with the exact radius.

A sphere of radius 2 shrinks as R(t) = sqrt(4 - 4t). The run uses quadratic
elements and BDF3 and prints the nodal errors in position, normal and mean
curvature at a few times.

Run with ``python3 demos/shrinking_sphere.py``.
"""
import numpy as np

from mcflow import FlowConfig, SphereSolution, initial_state, run_flow, sphere_mesh, sphere_surface
from mcflow.analysis import implicit_initial_data, sphere_errors

R0, TAU, T = 2.0, 0.0125, 0.6

mesh = sphere_mesh(3, R0, order=2)
nu, H = implicit_initial_data(sphere_surface(R0), mesh)
solution = SphereSolution(R0)

# Keep every tenth state so the errors can be reported along the way.
result = run_flow(mesh, FlowConfig(scheme="esfem", q=3, tau=TAU, T=T, snapshot_every=10),
                  initial_state(mesh, nu, H))

print(f"{mesh.num_nodes} nodes, tau = {TAU}")
print(f"{'t':>6} {'R exact':>9} {'R mean':>9} {'err x':>10} {'err nu':>10} {'err H':>10}")
for state in result.snapshots:
    err = sphere_errors(state, solution, mesh)
    radius = np.linalg.norm(state.x, axis=1).mean()
    print(f"{state.t:6.3f} {solution.radius(state.t):9.5f} {radius:9.5f} "
          f"{err.err_x:10.2e} {err.err_nu:10.2e} {err.err_H:10.2e}")
