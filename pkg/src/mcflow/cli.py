"""Command-line driver: ``mcf <command> [--config FILE] [--key value ...]``.

Configuration is a flat ``key = value`` file; ``--key value`` flags override
keys from the file. Commands:

``sphere-convergence``
    temporal and spatial EOC tables for the shrinking sphere (CSV and
    gnuplot ``.dat``).
``dumbbell``
    the pinching dumbbell; VTK snapshots and a diagnostics CSV.
``mesh-gen``
    an initial mesh as OBJ (corner mesh) and VTK (all nodes).
``single-run``
    one flow on a sphere or dumbbell; diagnostics CSV, sphere errors and the
    final VTK.

Outputs are written with full-precision floats in a fixed order, so
re-running a configuration reproduces them byte for byte.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import analysis, meshio
from .flow import SCHEMES, DiagnosticsRow, FlowConfig, NodalState, initial_state, run_flow
from .linalg import CgConfig
from .mesh import (
    DUMBBELL_RELAX_SWEEPS,
    build_icosphere,
    dumbbell_mesh,
    dumbbell_surface,
    sphere_mesh,
    sphere_surface,
)

logger = logging.getLogger(__name__)

COMMANDS = ("sphere-convergence", "dumbbell", "mesh-gen", "single-run")
SURFACES = ("sphere", "dumbbell")
PROTOCOLS = ("both", "temporal", "spatial")


class ConfigError(ValueError):
    """Invalid configuration text or values."""


# keys whose default depends on the command; None means "not given"
_COMMAND_DEFAULTS = {
    "sphere-convergence": dict(scheme="esfem", q=3, tau=0.0125, T=0.6, surface="sphere",
                               subdivisions=4, snapshot_every=0),
    "dumbbell": dict(scheme="esfem-normalized", q=2, tau=3e-3, T=0.15, surface="dumbbell",
                     subdivisions=4, snapshot_every=10),
    "mesh-gen": dict(scheme="esfem", q=2, tau=1e-2, T=0.1, surface="sphere",
                     subdivisions=3, snapshot_every=0),
    "single-run": dict(scheme="esfem", q=2, tau=1e-2, T=0.1, surface="sphere",
                       subdivisions=3, snapshot_every=0),
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; see :func:`parse_config`."""

    command: str
    scheme: Optional[str] = None
    q: Optional[int] = None
    k: int = 2
    tau: Optional[float] = None
    T: Optional[float] = None
    alpha: float = 0.0
    surface: Optional[str] = None
    subdivisions: Optional[int] = None
    radius: float = 2.0
    relax_sweeps: int = DUMBBELL_RELAX_SWEEPS
    protocol: str = "both"
    taus: tuple = (0.2, 0.1, 0.05, 0.025, 0.0125)
    meshes: tuple = (2, 3, 4)
    output: str = "mcf-output"
    snapshot_every: Optional[int] = None
    tol: float = 1e-10
    max_iter: int = 0
    preconditioner: str = "jacobi"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"command: unknown value {self.command!r}; choose from {COMMANDS}")
        for key, value in _COMMAND_DEFAULTS[self.command].items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, value)
        self._validate()

    def _validate(self):
        def need(ok, key, what):
            if not ok:
                raise ConfigError(f"{key}: {what} (got {getattr(self, key)!r})")

        need(self.scheme in SCHEMES, "scheme", f"must be one of {SCHEMES}")
        need(self.surface in SURFACES, "surface", f"must be one of {SURFACES}")
        need(self.protocol in PROTOCOLS, "protocol", f"must be one of {PROTOCOLS}")
        need(self.preconditioner in ("jacobi", "none"), "preconditioner", "must be jacobi or none")
        need(1 <= self.q <= 5, "q", "must lie in 1..5")
        need(self.k in (1, 2), "k", "must be 1 or 2")
        for key in ("tau", "T", "radius", "tol"):
            need(math.isfinite(getattr(self, key)) and getattr(self, key) > 0, key,
                 "must be positive")
        need(math.isfinite(self.alpha) and self.alpha >= 0, "alpha", "must be non-negative")
        for key in ("subdivisions", "relax_sweeps", "snapshot_every", "max_iter"):
            need(getattr(self, key) >= 0, key, "must be non-negative")
        need(len(self.taus) > 0 and all(t > 0 for t in self.taus), "taus",
             "must be a non-empty list of positive step sizes")
        need(all(b < a for a, b in zip(self.taus, self.taus[1:])), "taus",
             "must be strictly decreasing")
        need(len(self.meshes) > 0 and all(m >= 0 for m in self.meshes), "meshes",
             "must be a non-empty list of subdivision levels")
        need(all(b > a for a, b in zip(self.meshes, self.meshes[1:])), "meshes",
             "must be strictly increasing")
        need(self.output.strip() == self.output and self.output != ""
             and not any(c in self.output for c in "#\n\r\"'"), "output",
             "must be a directory name without '#', quotes, newlines or surrounding blanks")

    def cg_config(self) -> CgConfig:
        return CgConfig(rtol=self.tol, max_iter=self.max_iter or None,
                        preconditioner=self.preconditioner)

    def flow_config(self, **overrides) -> FlowConfig:
        values = dict(scheme=self.scheme, q=self.q, tau=self.tau, T=self.T, alpha=self.alpha,
                      snapshot_every=self.snapshot_every, cg=self.cg_config())
        values.update(overrides)
        try:
            return FlowConfig(**values)
        except ValueError as err:
            raise ConfigError(str(err)) from err


_FIELD_TYPES = {
    "command": str, "scheme": str, "q": int, "k": int, "tau": float, "T": float,
    "alpha": float, "surface": str, "subdivisions": int, "radius": float,
    "relax_sweeps": int, "protocol": str, "taus": (float,), "meshes": (int,),
    "output": str, "snapshot_every": int, "tol": float, "max_iter": int,
    "preconditioner": str,
}


def _convert(key: str, text: str):
    kind = _FIELD_TYPES[key]
    text = text.strip()
    if isinstance(kind, tuple):
        items = [t for t in text.replace(" ", "").split(",") if t]
        return tuple(_convert_scalar(key, kind[0], t) for t in items)
    return _convert_scalar(key, kind, text)


def _convert_scalar(key, kind, text):
    if kind is str:
        if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
            return text[1:-1]
        return text
    try:
        if kind is int:
            return int(text)
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: type mismatch, expected {kind.__name__} but got {text!r}") from None


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, value)
    return values


def parse_flags(flags: Sequence[str]) -> dict:
    """Parse ``--key value`` (or ``--key=value``) pairs."""
    values = {}
    items = list(flags)
    i = 0
    while i < len(items):
        token = items[i]
        if not token.startswith("--"):
            raise ConfigError(f"unexpected argument {token!r}; flags look like --key value")
        token = token[2:]
        if "=" in token:
            key, value = token.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(items):
                raise ConfigError(f"flag --{token} needs a value")
            key, value = token, items[i + 1]
            i += 2
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _convert(key, value)
    return values


def parse_config(text: Optional[str] = None, flags: Sequence[str] = (),
                 command: Optional[str] = None) -> RunConfig:
    """Build a :class:`RunConfig` from config text, flag overrides and a command.

    Precedence is ``command`` argument, then flags, then the text. Unset keys
    take the defaults of the command (``q=2, k=2, alpha=0, tol=1e-10``; the
    dumbbell uses ``tau=3e-3`` and the normalized scheme).
    """
    values = parse_text(text) if text else {}
    values.update(parse_flags(flags))
    if command is not None:
        values["command"] = command
    if "command" not in values:
        raise ConfigError("command: missing")
    return RunConfig(**values)


def _render_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_render_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(config: RunConfig) -> str:
    """Flat text form that :func:`parse_config` reads back to an equal config."""
    return "".join(f"{f.name} = {_render_value(getattr(config, f.name))}\n" for f in fields(config))


# ---------------------------------------------------------------------------
# commands


def _build_mesh(config: RunConfig):
    if config.surface == "sphere":
        return sphere_mesh(config.subdivisions, config.radius, order=config.k), \
            sphere_surface(config.radius)
    return dumbbell_mesh(config.subdivisions, order=config.k,
                         relax_sweeps=config.relax_sweeps), dumbbell_surface()


def _write_diagnostics(path, rows: Sequence[DiagnosticsRow]) -> None:
    meshio.write_csv(path, DiagnosticsRow.FIELDS, [r.as_tuple() for r in rows])


def _write_snapshot(path, mesh, state: NodalState) -> None:
    meshio.write_vtk(path, mesh, state.x, {
        "H": state.H,
        "nu": state.nu,
        "v": state.v,
        "nu_norm": np.linalg.norm(state.nu, axis=1),
    }, title=f"mcflow t={state.t!r}")


def _run_with_snapshots(config: RunConfig, out: str):
    mesh, surf = _build_mesh(config)
    nu0, H0 = analysis.implicit_initial_data(surf, mesh)
    init = initial_state(mesh, nu0, H0, config.scheme, cg=config.cg_config())
    flow_cfg = config.flow_config()
    written = set()

    def observe(state):
        n = int(round(state.t / config.tau))
        if n == 0 or (config.snapshot_every and n % config.snapshot_every == 0):
            _write_snapshot(os.path.join(out, f"snapshot_{n:05d}.vtk"), mesh, state)
            written.add(n)

    result = run_flow(mesh, flow_cfg, init, observer=observe)
    n_final = int(round(result.final.t / config.tau))
    if n_final not in written:
        _write_snapshot(os.path.join(out, f"snapshot_{n_final:05d}.vtk"), mesh, result.final)
    _write_diagnostics(os.path.join(out, "diagnostics.csv"), result.report.rows)
    meshio.write_csv(os.path.join(out, "summary.csv"), ("key", "value"), [
        ("nodes", mesh.num_nodes),
        ("elements", mesh.num_elements),
        ("stop_time", float(result.report.stop_time)),
        ("halt_time", float(result.report.halt_time)),
        ("stopped_early", int(result.report.stopped_early)),
        ("stop_reason", result.report.stop_reason),
    ])
    return mesh, result


def _sphere_convergence(config: RunConfig, out: str) -> None:
    protocols = ("temporal", "spatial") if config.protocol == "both" else (config.protocol,)
    for protocol in protocols:
        if protocol == "temporal":
            taus, subdivisions = config.taus, (config.subdivisions,)
        else:
            taus, subdivisions = (config.tau,), config.meshes
        table, _ = analysis.convergence_study(
            protocol, q=config.q, k=config.k, R0=config.radius, T=config.T, taus=taus,
            subdivisions=subdivisions, scheme=config.scheme)
        table.write_csv(os.path.join(out, f"{protocol}_eoc.csv"))
        table.write_gnuplot(os.path.join(out, f"{protocol}_eoc.dat"))


def _mesh_gen(config: RunConfig, out: str) -> None:
    if config.surface == "sphere":
        mesh = build_icosphere(config.subdivisions, config.radius)
        if config.k == 2:
            mesh = sphere_mesh(config.subdivisions, config.radius, order=2)
    else:
        mesh = dumbbell_mesh(config.subdivisions, order=config.k,
                             relax_sweeps=config.relax_sweeps)
    meshio.write_obj(os.path.join(out, "mesh.obj"), mesh)
    meshio.write_vtk(os.path.join(out, "mesh.vtk"), mesh)


def _single_run(config: RunConfig, out: str) -> None:
    if config.surface == "dumbbell":
        _run_with_snapshots(config, out)
        return
    run = analysis.run_sphere(config.subdivisions, config.tau, q=config.q, k=config.k,
                              R0=config.radius, T=config.T, scheme=config.scheme,
                              alpha=config.alpha)
    _write_diagnostics(os.path.join(out, "diagnostics.csv"), run.report.rows)
    meshio.write_csv(os.path.join(out, "errors.csv"), ("t", "err_x", "err_v", "err_nu", "err_H"),
                     [(e.t, e.err_x, e.err_v, e.err_nu, e.err_H) for e in run.errors])


def execute(config: RunConfig) -> int:
    """Run the configured command and write its outputs; returns an exit status."""
    out = meshio.ensure_dir(config.output)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(render_config(config))
    if config.command == "sphere-convergence":
        _sphere_convergence(config, out)
    elif config.command == "dumbbell":
        _run_with_snapshots(config, out)
    elif config.command == "mesh-gen":
        _mesh_gen(config, out)
    else:
        _single_run(config, out)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mcf", description="Mean curvature flow by evolving surface finite elements.",
        epilog="Any configuration key can be given as --key value and overrides the file.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = None
        if args.config:
            with open(args.config) as fh:
                text = fh.read()
        config = parse_config(text, rest, command=args.command)
    except (ConfigError, OSError) as err:
        print(f"mcf: configuration error: {err}", file=sys.stderr)
        return 2
    try:
        return execute(config)
    except Exception as err:  # reported, partial outputs stay on disk
        logger.debug("failure", exc_info=True)
        print(f"mcf: {config.command} failed: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
