"""Linearly implicit BDF time stepping for mean curvature flow.

Two evolving-surface schemes share the same multistep skeleton:

* ``esfem`` evolves the nodal normal ``nu`` and mean curvature ``H`` by their
  parabolic evolution equations and obtains the velocity from
  ``K(x) v = g(x, u)``; ``esfem-normalized`` additionally rescales every
  nodal normal to unit length after each step;
* ``dziuk`` moves the nodes by ``M(x) v + A(x) x = 0``.

All matrices and nonlinear terms are evaluated at the extrapolated state,
so every step only solves linear SPD systems.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Literal, Optional

import numpy as np

from . import fem, linalg
from .linalg import CgConfig, CgConvergenceError
from .mesh import SurfaceMesh, mesh_width

logger = logging.getLogger(__name__)

SCHEMES = ("esfem", "esfem-normalized", "dziuk")
Scheme = Literal["esfem", "esfem-normalized", "dziuk"]


# ---------------------------------------------------------------------------
# BDF coefficients


@dataclass(frozen=True)
class BdfScheme:
    """Coefficients of the q-step BDF method and its extrapolation.

    ``delta`` are the coefficients of ``delta(z) = sum_{l=1}^q (1 - z)^l / l``
    and ``gamma`` those of ``gamma(z) = (1 - (1 - z)^q) / z``, both as exact
    fractions, lowest power first.
    """

    order: int
    delta: tuple
    gamma: tuple

    @property
    def delta_array(self) -> np.ndarray:
        return np.array([float(c) for c in self.delta])

    @property
    def gamma_array(self) -> np.ndarray:
        return np.array([float(c) for c in self.gamma])


def bdf_coefficients(q: int) -> BdfScheme:
    """Exact BDF(q) and extrapolation coefficients for ``1 <= q <= 5``."""
    if not isinstance(q, (int, np.integer)) or not 1 <= q <= 5:
        raise ValueError(f"BDF order must be an integer in 1..5, got {q!r}")
    delta = [Fraction(0)] * (q + 1)
    for ell in range(1, q + 1):
        for j in range(ell + 1):
            delta[j] += Fraction((-1) ** j * math.comb(ell, j), ell)
    gamma = [Fraction((-1) ** j * math.comb(q, j + 1)) for j in range(q)]
    return BdfScheme(int(q), tuple(delta), tuple(gamma))


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True, eq=False)
class NodalState:
    """Positions, velocity, normal and mean curvature at the nodes at time ``t``."""

    t: float
    x: np.ndarray
    v: np.ndarray
    nu: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        n = len(self.x)
        for name, shape in (("x", (n, 3)), ("v", (n, 3)), ("nu", (n, 3)), ("H", (n,))):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")

    @property
    def num_nodes(self) -> int:
        return len(self.x)

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in (self.x, self.v, self.nu, self.H))


class FlowHistory:
    """The most recent states of a multistep run, oldest first."""

    def __init__(self, states: Iterable[NodalState] = (), maxlen: int = 6):
        self._states: deque[NodalState] = deque(maxlen=maxlen)
        for s in states:
            self.append(s)

    def append(self, state: NodalState) -> None:
        if self._states:
            last = self._states[-1]
            if state.t <= last.t:
                raise ValueError("history times must be strictly increasing")
        self._states.append(state)

    def __len__(self) -> int:
        return len(self._states)

    def __getitem__(self, i: int) -> NodalState:
        return self._states[i]

    def __iter__(self):
        return iter(self._states)

    @property
    def latest(self) -> NodalState:
        return self._states[-1]

    def back(self, j: int) -> NodalState:
        """State ``j`` steps before the newest (``back(0)`` is the newest)."""
        return self._states[-1 - j]


def extrapolate(history: FlowHistory, scheme: BdfScheme):
    """Extrapolated ``(x, nu, H)`` at the next step from the last q states."""
    q = scheme.order
    if len(history) < q:
        raise ValueError(f"extrapolation of order {q} needs {q} states, have {len(history)}")
    gamma = scheme.gamma_array
    x = sum(gamma[j] * history.back(j).x for j in range(q))
    nu = sum(gamma[j] * history.back(j).nu for j in range(q))
    H = sum(gamma[j] * history.back(j).H for j in range(q))
    return x, nu, H


def _history_sum(history: FlowHistory, scheme: BdfScheme, attr: str) -> np.ndarray:
    """``sum_{j=1}^q delta_j w^{n-j}`` for the named field."""
    delta = scheme.delta_array
    return sum(delta[j] * getattr(history.back(j - 1), attr) for j in range(1, scheme.order + 1))


def normalize_normals(state: NodalState) -> NodalState:
    """Rescale every nodal normal to unit length."""
    norms = np.linalg.norm(state.nu, axis=1)
    if np.any(norms == 0):
        raise ValueError(f"zero normal at node {int(np.argmin(norms))}")
    return replace(state, nu=state.nu / norms[:, None])


# ---------------------------------------------------------------------------
# single steps


def esfem_step(mesh: SurfaceMesh, history: FlowHistory, scheme: BdfScheme, tau: float,
               alpha: float = 0.0, cg: CgConfig = CgConfig()) -> NodalState:
    """One linearly implicit BDF step of the normal/curvature scheme.

    Solves ``K(x~) v = g(x~, u~)``, then
    ``(delta_0/tau M(x~) + A(x~)) u = f(x~, u~) - M(x~) sum_{j>=1} delta_j u^{n-j} / tau``
    and finally ``x = (tau v - sum_{j>=1} delta_j x^{n-j}) / delta_0``.
    """
    q = scheme.order
    delta = scheme.delta_array
    xt, nut, Ht = extrapolate(history, scheme)
    geom = fem.SurfaceGeometry(mesh, xt)
    M = fem.assemble_mass(mesh, geom=geom)
    A = fem.assemble_stiffness(mesh, geom=geom)

    g = fem.assemble_g(mesh, None, nut, Ht, geom=geom)
    K = fem.shifted_sum(M, A, 1.0)
    v = linalg.multi_rhs_solve(K, g, cg, x0=history.latest.v).solution

    f1, f2 = fem.assemble_f(mesh, None, nut, Ht, geom=geom)
    if alpha:
        f1 = f1 + fem.stabilization_term(mesh, None, nut, alpha, geom=geom)
    u_hist = np.column_stack((_history_sum(history, scheme, "nu"), _history_sum(history, scheme, "H")))
    rhs = np.column_stack((f1, f2)) - (M @ u_hist) / tau
    S = fem.shifted_sum(M, A, delta[0] / tau)
    u = linalg.multi_rhs_solve(S, rhs, cg, x0=np.column_stack((nut, Ht))).solution

    x = (tau * v - _history_sum(history, scheme, "x")) / delta[0]
    t = history.latest.t + tau
    return NodalState(t, x, v, np.ascontiguousarray(u[:, :3]), np.ascontiguousarray(u[:, 3]))


def dziuk_step(mesh: SurfaceMesh, history: FlowHistory, scheme: BdfScheme, tau: float,
               cg: CgConfig = CgConfig()) -> NodalState:
    """One linearly implicit BDF step of ``M(x) v + A(x) x = 0``.

    ``nu`` and ``H`` of the returned state are recomputed from the new
    geometry and only serve as diagnostics.
    """
    delta = scheme.delta_array
    xt, _, _ = extrapolate(history, scheme)
    geom = fem.SurfaceGeometry(mesh, xt)
    M = fem.assemble_mass(mesh, geom=geom)
    A = fem.assemble_stiffness(mesh, geom=geom)
    x_hist = _history_sum(history, scheme, "x")
    S = fem.shifted_sum(M, A, delta[0] / tau)
    x = linalg.multi_rhs_solve(S, -(M @ x_hist) / tau, cg, x0=xt).solution
    v = (delta[0] * x + x_hist) / tau
    nu = nodal_normals(mesh, x)
    H = -np.einsum("ij,ij->i", v, nu)
    return NodalState(history.latest.t + tau, x, v, nu, H)


def nodal_normals(mesh: SurfaceMesh, x: np.ndarray) -> np.ndarray:
    """Unit normals at the nodes, averaged over the adjacent elements."""
    elem = fem.ReferenceElement(mesh.order)
    dphi = elem.gradients(elem.nodes)
    xe = x[mesh.elements]
    jac = np.einsum("eic,kia->ekca", xe, dphi)
    n = np.cross(jac[..., 0], jac[..., 1])
    acc = np.zeros_like(x)
    for c in range(3):
        acc[:, c] = np.bincount(mesh.elements.ravel(), weights=n[..., c].ravel(), minlength=len(x))
    return acc / np.linalg.norm(acc, axis=1, keepdims=True)


def initial_state(mesh: SurfaceMesh, nu: np.ndarray, H: np.ndarray, scheme: Scheme = "esfem",
                  x: Optional[np.ndarray] = None, cg: CgConfig = CgConfig()) -> NodalState:
    """State at ``t = 0`` with the velocity taken from the scheme's velocity law."""
    x = np.array(mesh.reference_positions if x is None else x, dtype=float)
    geom = fem.SurfaceGeometry(mesh, x)
    M = fem.assemble_mass(mesh, geom=geom)
    A = fem.assemble_stiffness(mesh, geom=geom)
    if scheme == "dziuk":
        v = linalg.multi_rhs_solve(M, -(A @ x), cg).solution
        nu = nodal_normals(mesh, x)
        H = -np.einsum("ij,ij->i", v, nu)
    else:
        g = fem.assemble_g(mesh, None, nu, H, geom=geom)
        v = linalg.multi_rhs_solve(fem.shifted_sum(M, A, 1.0), g, cg).solution
    return NodalState(0.0, x, v, np.array(nu, dtype=float), np.array(H, dtype=float))


# ---------------------------------------------------------------------------
# configuration and driver


@dataclass(frozen=True)
class FlowConfig:
    """Time-stepping parameters.

    ``snapshot_every = 0`` keeps only the first and last state.
    """

    scheme: Scheme = "esfem"
    q: int = 2
    tau: float = 1e-2
    T: float = 0.1
    alpha: float = 0.0
    min_area_element: float = fem.MIN_AREA_ELEMENT
    max_normal_norm: float = 10.0
    check_inversion: bool = True
    snapshot_every: int = 0
    cg: CgConfig = field(default_factory=CgConfig)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not 1 <= self.q <= 5:
            raise ValueError("q must lie in 1..5")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.T < self.tau * self.q - 1e-12 * self.tau:
            raise ValueError(f"T = {self.T} < q * tau = {self.q * self.tau}: nothing to integrate")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.snapshot_every < 0:
            raise ValueError("snapshot_every must be >= 0")

    @property
    def num_steps(self) -> int:
        return int(math.floor(self.T / self.tau + 1e-9))


class SingularityStop(RuntimeError):
    """The discrete surface stopped being a regular surface."""

    def __init__(self, reason: str, t: float):
        self.reason = reason
        self.t = t
        super().__init__(f"{reason} at t = {t:.6g}")


def step(mesh: SurfaceMesh, history: FlowHistory, scheme: BdfScheme, tau: float,
         config: FlowConfig) -> NodalState:
    """Advance by one step of the configured scheme."""
    if config.scheme == "dziuk":
        return dziuk_step(mesh, history, scheme, tau, config.cg)
    new = esfem_step(mesh, history, scheme, tau, config.alpha, config.cg)
    if config.scheme == "esfem-normalized":
        new = normalize_normals(new)
    return new


def bootstrap_start(mesh: SurfaceMesh, initial: NodalState, q: int, tau: float,
                    config: Optional[FlowConfig] = None,
                    method: Literal["extrapolation", "cascade"] = "extrapolation") -> FlowHistory:
    """Starting values at ``t_0 .. t_{q-1}`` for the q-step method.

    For ``q = 2`` one linearly implicit Euler step of size ``tau`` is taken.
    For ``q >= 3`` the default ``"extrapolation"`` advances each step of
    size ``tau`` by linearly implicit Euler with 1, 2, ..., q substeps and
    combines the results by polynomial extrapolation to zero substep size,
    which gives starting errors of order ``tau**(q+1)``. ``"cascade"`` uses
    the order ``l`` method with step ``tau / 2**(q - l)`` for stage ``l``;
    its starting errors are only of order ``tau**2``.
    """
    config = config or FlowConfig(q=q, tau=tau, T=q * tau)
    history = FlowHistory([initial], maxlen=q + 1)
    if q == 1:
        return history
    if q == 2:
        history.append(step(mesh, history, bdf_coefficients(1), tau, config))
        return history
    if method == "cascade":
        states = _cascade(mesh, initial, q - 1, tau / 2, 2 * (q - 1), config)
        for s in states[2::2]:
            history.append(s)
        return history
    if method != "extrapolation":
        raise ValueError(f"unknown start method {method!r}")
    state = initial
    for i in range(1, q):
        state = replace(_extrapolated_euler(mesh, state, tau, q, config), t=i * tau)
        history.append(state)
    return history


def _euler_run(mesh, state, tau, substeps, config):
    euler = bdf_coefficients(1)
    h = tau / substeps
    hist = FlowHistory([state], maxlen=2)
    for _ in range(substeps):
        hist.append(step(mesh, hist, euler, h, config))
    return hist.latest


def _extrapolated_euler(mesh, state, tau, levels, config):
    """Aitken-Neville extrapolation of Euler runs with 1..levels substeps."""
    fields = ("x", "v", "nu", "H")
    table = []
    for i in range(levels):
        n_i = i + 1
        end = _euler_run(mesh, state, tau, n_i, config)
        row = [tuple(getattr(end, f) for f in fields)]
        for k in range(1, i + 1):
            ratio = n_i / (n_i - k) - 1.0
            row.append(tuple(a + (a - b) / ratio for a, b in zip(row[k - 1], table[i - 1][k - 1])))
        table.append(row)
    x, v, nu, H = table[-1][-1]
    new = NodalState(state.t + tau, x, v, nu, H)
    if config.scheme == "esfem-normalized":
        new = normalize_normals(new)
    return new


def _cascade(mesh, initial, order, h, num_steps, config):
    """Run the order-``order`` method ``num_steps`` steps of size ``h``."""
    if order == 1:
        hist = FlowHistory([initial], maxlen=2)
    else:
        hist = FlowHistory(maxlen=order + 1)
        for s in _cascade(mesh, initial, order - 1, h / 2, 2 * (order - 1), config)[::2]:
            hist.append(s)
    states = list(hist)
    scheme = bdf_coefficients(order)
    while len(states) <= num_steps:
        new = step(mesh, hist, scheme, h, config)
        new = replace(new, t=states[0].t + len(states) * h)
        hist.append(new)
        states.append(new)
    return states


@dataclass
class DiagnosticsRow:
    t: float
    area: float
    h: float
    min_area_element: float
    min_nu_norm: float
    max_nu_norm: float
    max_H: float
    neck_radius: float

    FIELDS = ("t", "area", "h", "min_area_element", "min_nu_norm", "max_nu_norm", "max_H",
              "neck_radius")

    def as_tuple(self):
        return tuple(getattr(self, f) for f in self.FIELDS)


def neck_radius(mesh: SurfaceMesh, x: np.ndarray, h: Optional[float] = None) -> float:
    """Smallest distance to the x3-axis among nodes with ``|x3| < h``."""
    h = mesh_width(mesh, x) if h is None else h
    near = np.abs(x[:, 2]) < h
    if not near.any():
        return float("nan")
    return float(np.min(np.hypot(x[near, 0], x[near, 1])))


def state_diagnostics(mesh: SurfaceMesh, state: NodalState,
                      geom: Optional[fem.SurfaceGeometry] = None) -> DiagnosticsRow:
    geom = geom or fem.SurfaceGeometry(mesh, state.x, min_area_element=0.0)
    h = mesh_width(mesh, state.x)
    norms = np.linalg.norm(state.nu, axis=1)
    return DiagnosticsRow(
        t=state.t,
        area=geom.area(),
        h=h,
        min_area_element=geom.min_area_element,
        min_nu_norm=float(norms.min()),
        max_nu_norm=float(norms.max()),
        max_H=float(state.H.max()),
        neck_radius=neck_radius(mesh, state.x, h),
    )


@dataclass
class ExperimentReport:
    """Per-step diagnostics and the reason a run ended."""

    rows: list = field(default_factory=list)
    stop_reason: str = "end time reached"
    stopped_early: bool = False
    halt_time: float = float("nan")

    @property
    def stop_time(self) -> float:
        """Time of the last accepted state."""
        return self.rows[-1].t if self.rows else 0.0


@dataclass
class FlowResult:
    final: NodalState
    snapshots: list
    report: ExperimentReport


def enclosed_volume(geom: fem.SurfaceGeometry) -> float:
    """Signed volume ``1/3 int x . n`` enclosed by the discrete surface."""
    y = geom.interpolate(geom.x)
    return float(np.sum(np.einsum("eqc,eqc->eq", y, geom.geometric_normal()) * geom.dA) / 3)


def _check_state(mesh, state, config, geom, volume_sign=1.0):
    if not state.is_finite():
        return "non-finite values"
    if geom.min_area_element < config.min_area_element:
        return f"degenerate element (area element {geom.min_area_element:.3e})"
    if enclosed_volume(geom) * volume_sign <= 0:
        return "orientation reversal (enclosed volume changed sign)"
    if config.scheme != "dziuk":
        nmax = float(np.linalg.norm(state.nu, axis=1).max())
        if nmax > config.max_normal_norm:
            return f"normal blow-up (|nu| = {nmax:.3g})"
        if config.check_inversion:
            nu_q = geom.interpolate(state.nu)
            if np.any(np.einsum("eqc,eqc->eq", nu_q, geom.geometric_normal()) <= 0):
                return "element inversion (discrete surface normal opposes nu_h)"
    return None


def run_flow(mesh: SurfaceMesh, config: FlowConfig, initial: NodalState,
             observer: Optional[Callable[[NodalState], None]] = None) -> FlowResult:
    """Integrate from ``initial`` to ``config.T`` or until a singularity stop.

    A step is rejected and the run stops when its state has non-finite
    entries, an area element below ``config.min_area_element``, a sign change
    of the enclosed volume, a nodal ``|nu|`` above ``config.max_normal_norm``
    or (with ``check_inversion``) a point where ``nu_h`` opposes the discrete
    surface normal; CG failure and degenerate extrapolated geometry stop it
    as well. The last accepted state is returned.

    ``observer`` is called with every accepted state, the initial one included.
    The returned snapshots hold the initial state, every
    ``snapshot_every``-th state and the last accepted state.
    """
    scheme = bdf_coefficients(config.q)
    tau = config.tau
    report = ExperimentReport()
    snapshots = [initial]
    accepted = [initial]
    volume_sign = math.copysign(1.0, enclosed_volume(fem.SurfaceGeometry(mesh, initial.x)))

    def accept(state, index):
        geom = fem.SurfaceGeometry(mesh, state.x, min_area_element=0.0)
        reason = _check_state(mesh, state, config, geom, volume_sign)
        if reason is not None:
            raise SingularityStop(reason, state.t)
        report.rows.append(state_diagnostics(mesh, state, geom))
        accepted.append(state)
        if observer is not None:
            observer(state)
        if config.snapshot_every and index % config.snapshot_every == 0:
            snapshots.append(state)

    report.rows.append(state_diagnostics(mesh, initial))
    if observer is not None:
        observer(initial)
    try:
        history = bootstrap_start(mesh, initial, config.q, tau, config)
        for i, s in enumerate(list(history)[1:], start=1):
            accept(replace(s, t=i * tau), i)
        history = FlowHistory(accepted[-config.q:], maxlen=config.q + 1)
        for n in range(config.q, config.num_steps + 1):
            new = step(mesh, history, scheme, tau, config)
            new = replace(new, t=n * tau)
            accept(new, n)
            history.append(new)
    except SingularityStop as stop:
        report.stop_reason, report.stopped_early = str(stop), True
        report.halt_time = stop.t
    except (fem.DegenerateGeometryError, CgConvergenceError, FloatingPointError) as err:
        report.stop_reason, report.stopped_early = f"{type(err).__name__}: {err}", True
        report.halt_time = accepted[-1].t + tau
    if report.stopped_early:
        logger.info("flow stopped: %s", report.stop_reason)
    else:
        report.halt_time = accepted[-1].t
    final = accepted[-1]
    if snapshots[-1] is not final:
        snapshots.append(final)
    return FlowResult(final, snapshots, report)
