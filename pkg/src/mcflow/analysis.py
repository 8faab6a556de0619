"""Exact sphere solution, initial data, discrete error norms and EOC studies."""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import fem
from .flow import (
    FlowConfig,
    NodalState,
    initial_state,
    run_flow,
    state_diagnostics,
)
from .mesh import ImplicitSurface, SurfaceMesh, mesh_width, sphere_mesh, sphere_surface

logger = logging.getLogger(__name__)

QUANTITIES = ("x", "v", "nu", "H")


# ---------------------------------------------------------------------------
# exact solution


def sphere_exact(R0: float, t: float):
    """Radius, mean curvature and node scaling factor of the shrinking sphere.

    Returns ``(R, H, R / R0)`` with ``R = sqrt(R0^2 - 4t)`` and ``H = 2 / R``.
    """
    if t >= R0**2 / 4:
        raise ValueError(f"t = {t} is past the extinction time {R0**2 / 4}")
    R = math.sqrt(R0 * R0 - 4.0 * t)
    return R, 2.0 / R, R / R0


@dataclass(frozen=True)
class SphereSolution:
    """Sphere of initial radius ``R0`` moving by mean curvature."""

    R0: float = 2.0

    @property
    def extinction_time(self) -> float:
        return self.R0**2 / 4

    def radius(self, t: float) -> float:
        return sphere_exact(self.R0, t)[0]

    def mean_curvature(self, t: float) -> float:
        return sphere_exact(self.R0, t)[1]

    @staticmethod
    def normal(x: np.ndarray) -> np.ndarray:
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    def positions(self, x0: np.ndarray, t: float) -> np.ndarray:
        return x0 * sphere_exact(self.R0, t)[2]

    def velocity(self, x: np.ndarray, t: float) -> np.ndarray:
        return -self.mean_curvature(t) * self.normal(x)

    def state(self, x0: np.ndarray, t: float) -> NodalState:
        """Nodal interpolant of the exact solution at time ``t``."""
        x = self.positions(x0, t)
        nu = self.normal(x)
        H = np.full(len(x), self.mean_curvature(t))
        return NodalState(t, x, self.velocity(x, t), nu, H)


# ---------------------------------------------------------------------------
# initial data from a level set


def implicit_initial_data(surf: ImplicitSurface, mesh: SurfaceMesh,
                          x0: Optional[np.ndarray] = None):
    """Nodal normal and mean curvature of ``{d = 0}``.

    ``nu = grad d / |grad d|`` and
    ``H = (lap d |grad d|^2 - grad d^T Hess d grad d) / |grad d|^3``,
    positive on a sphere with outward normal.
    """
    x = mesh.reference_positions if x0 is None else np.asarray(x0)
    grad = surf.gradient(x)
    norm = np.linalg.norm(grad, axis=1)
    if np.any(norm == 0):
        raise ValueError(f"vanishing level-set gradient at node {int(np.argmin(norm))}")
    hess = surf.hessian(x)
    lap = np.trace(hess, axis1=1, axis2=2)
    quad = np.einsum("ni,nij,nj->n", grad, hess, grad)
    H = (lap * norm**2 - quad) / norm**3
    return grad / norm[:, None], H


# ---------------------------------------------------------------------------
# norms and errors


def discrete_norms(M, A, e: np.ndarray):
    """``(|e|_M, |e|_A, |e|_K)`` of a scalar (N,) or vector (N, d) nodal field.

    ``|e|_M^2 = e^T M e`` summed over components, likewise for ``A`` and
    ``K = M + A``.
    """
    e = np.asarray(e, dtype=float)
    n = M.shape[0]
    if e.shape[0] != n or e.ndim > 2:
        raise ValueError(f"field of shape {e.shape} does not match {n} nodes")
    Me = M @ e
    Ae = A @ e
    m2 = float(np.sum(e * Me))
    a2 = float(np.sum(e * Ae))
    return math.sqrt(max(m2, 0.0)), math.sqrt(max(a2, 0.0)), math.sqrt(max(m2 + a2, 0.0))


@dataclass
class ErrorRecord:
    t: float
    err_x: float
    err_v: float
    err_nu: float
    err_H: float
    h: float = float("nan")
    tau: float = float("nan")

    def get(self, quantity: str) -> float:
        return getattr(self, f"err_{quantity}")


def sphere_errors(state: NodalState, solution: SphereSolution, mesh: SurfaceMesh,
                  x0: Optional[np.ndarray] = None) -> ErrorRecord:
    """K-norm errors against the exact sphere, measured on ``Gamma_h[x*(t)]``."""
    x0 = mesh.reference_positions if x0 is None else x0
    ref = solution.state(x0, state.t)
    geom = fem.SurfaceGeometry(mesh, ref.x)
    M = fem.assemble_mass(mesh, geom=geom)
    A = fem.assemble_stiffness(mesh, geom=geom)
    errs = [discrete_norms(M, A, getattr(state, a) - getattr(ref, a))[2]
            for a in ("x", "v", "nu", "H")]
    return ErrorRecord(state.t, *errs, h=mesh_width(mesh, x0))


def velocity_law_defect(mesh: SurfaceMesh, state: NodalState, solution: SphereSolution):
    """Defect of the discrete velocity against the law ``v = -H nu`` on a sphere.

    Returns ``(nodal, l2)``: the M-norm of the nodal vector ``v_j + H_j nu_j``
    and the L2 norm on ``Gamma_h[x]`` of ``v_h + H nu`` with the exact
    ``H nu`` evaluated at quadrature points through the radial lift.
    """
    geom = fem.SurfaceGeometry(mesh, state.x)
    M = fem.assemble_mass(mesh, geom=geom)
    nodal = discrete_norms(M, M, state.v + state.H[:, None] * state.nu)[0]
    y = geom.interpolate(state.x)
    exact = -solution.mean_curvature(state.t) * solution.normal(y.reshape(-1, 3)).reshape(y.shape)
    diff = geom.interpolate(state.v) - exact
    l2 = math.sqrt(float(np.sum(np.sum(diff * diff, axis=-1) * geom.dA)))
    return nodal, l2


def diagnostics(mesh: SurfaceMesh, state: NodalState):
    """``(area, neck radius, min |nu_j|, max |nu_j|, max H_j)`` of a state."""
    row = state_diagnostics(mesh, state)
    return row.area, row.neck_radius, row.min_nu_norm, row.max_nu_norm, row.max_H


# ---------------------------------------------------------------------------
# sphere runs and convergence tables


@dataclass
class SphereRun:
    """Result of one shrinking-sphere computation."""

    tau: float
    h: float
    subdivisions: int
    errors: list
    report: object
    max_errors: dict = field(default_factory=dict)
    area_deviation: float = float("nan")


def run_sphere(subdivisions: int, tau: float, q: int = 3, k: int = 2, R0: float = 2.0,
               T: float = 0.6, scheme: str = "esfem", alpha: float = 0.0) -> SphereRun:
    """Shrinking sphere with exact initial data; records errors at every step."""
    mesh = sphere_mesh(subdivisions, R0, order=k)
    solution = SphereSolution(R0)
    x0 = mesh.reference_positions
    nu0, H0 = implicit_initial_data(sphere_surface(R0), mesh)
    init = initial_state(mesh, nu0, H0, scheme)
    cfg = FlowConfig(scheme=scheme, q=q, tau=tau, T=T, alpha=alpha)
    errors = []
    area_dev = []

    def observe(state):
        if state.t >= solution.extinction_time:
            return
        errors.append(sphere_errors(state, solution, mesh, x0))

    result = run_flow(mesh, cfg, init, observer=observe)
    for row in result.report.rows:
        R = solution.radius(row.t)
        area_dev.append(abs(row.area - 4 * math.pi * R * R) / (4 * math.pi * R * R))
    h = mesh_width(mesh)
    for e in errors:
        e.h, e.tau = h, tau
    maxima = {qty: max(e.get(qty) for e in errors) for qty in QUANTITIES}
    return SphereRun(tau, h, subdivisions, errors, result.report, maxima, max(area_dev))


@dataclass
class EocTable:
    """Error rows with orders of convergence between consecutive rows of a group.

    Each row is a dict with keys ``tau``, ``h``, ``err_<q>`` and ``eoc_<q>``;
    ``eoc_<q>`` is ``nan`` for the first row of each group.
    """

    protocol: str
    rows: list = field(default_factory=list)

    COLUMNS = ("tau", "h") + tuple(f"err_{q}" for q in QUANTITIES) + tuple(
        f"eoc_{q}" for q in QUANTITIES)

    def eoc(self, quantity: str) -> list:
        return [r[f"eoc_{quantity}"] for r in self.rows if not math.isnan(r[f"eoc_{quantity}"])]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in self.COLUMNS])

    def write_gnuplot(self, path) -> None:
        """Whitespace-separated columns, one blank line between groups."""
        key = "h" if self.protocol == "temporal" else "tau"
        with open(path, "w") as fh:
            fh.write("# " + " ".join(self.COLUMNS) + "\n")
            prev = None
            for r in self.rows:
                if prev is not None and r[key] != prev:
                    fh.write("\n\n")
                prev = r[key]
                fh.write(" ".join(_fmt(r[c]) for c in self.COLUMNS) + "\n")


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else repr(float(value))


def eoc_table(runs: Sequence[SphereRun], protocol: str) -> EocTable:
    """Tabulate runs; orders are computed within groups of equal h (temporal) or tau (spatial)."""
    if protocol not in ("temporal", "spatial"):
        raise ValueError(f"unknown protocol {protocol!r}")
    table = EocTable(protocol)
    if protocol == "temporal":
        ordered = sorted(runs, key=lambda r: (r.subdivisions, -r.tau))
        same = lambda a, b: a.subdivisions == b.subdivisions
        scale = lambda a, b: math.log(a.tau / b.tau)
    else:
        ordered = sorted(runs, key=lambda r: (-r.tau, r.subdivisions))
        same = lambda a, b: a.tau == b.tau
        scale = lambda a, b: math.log(a.h / b.h)
    prev = None
    for run in ordered:
        row = {"tau": run.tau, "h": run.h}
        for qty in QUANTITIES:
            err = run.max_errors[qty]
            row[f"err_{qty}"] = err
            eoc = float("nan")
            if prev is not None and same(prev, run) and err > 0 and prev.max_errors[qty] > 0:
                eoc = math.log(prev.max_errors[qty] / err) / scale(prev, run)
            row[f"eoc_{qty}"] = eoc
        table.rows.append(row)
        prev = run
    return table


def _sphere_job(args):
    return run_sphere(**args)


def convergence_study(protocol: str, q: int = 3, k: int = 2, R0: float = 2.0, T: float = 0.6,
                      taus: Sequence[float] = (0.2, 0.1, 0.05, 0.025, 0.0125),
                      subdivisions: Sequence[int] = (4,), scheme: str = "esfem",
                      workers: Optional[int] = None):
    """Run the sphere for every (tau, mesh) pair and tabulate the L-infinity-in-time errors.

    Returns ``(table, runs)``. ``workers`` defaults to the ``MCF_THREADS``
    environment variable (1 when unset); runs are independent, and the table
    does not depend on the number of workers.
    """
    if not taus or not subdivisions:
        raise ValueError("tau and mesh lists must be non-empty")
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau list must be strictly decreasing")
    if any(b <= a for a, b in zip(subdivisions, subdivisions[1:])):
        raise ValueError("mesh list must be strictly increasing")
    jobs = [dict(subdivisions=s, tau=t, q=q, k=k, R0=R0, T=T, scheme=scheme)
            for s in subdivisions for t in taus]
    workers = workers or int(os.environ.get("MCF_THREADS", "1"))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_sphere_job, jobs))
    else:
        runs = [_sphere_job(j) for j in jobs]
    for r in runs:
        logger.info("s=%d tau=%g: %s", r.subdivisions, r.tau, r.max_errors)
    return eoc_table(runs, protocol), runs
