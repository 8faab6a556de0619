"""Legacy ASCII VTK, Wavefront OBJ and CSV output."""
from __future__ import annotations

import csv
import os
from typing import Mapping, Optional

import numpy as np

from .mesh import SurfaceMesh


def _num(v: float) -> str:
    return repr(float(v))


def write_vtk(path, mesh: SurfaceMesh, x: Optional[np.ndarray] = None,
              point_data: Optional[Mapping[str, np.ndarray]] = None,
              title: str = "mcflow surface") -> None:
    """Write the surface as legacy VTK 3.0 POLYDATA with optional POINT_DATA.

    Quadratic elements are written as four flat sub-triangles. Arrays of
    shape (N,) become SCALARS, arrays of shape (N, 3) become VECTORS.
    """
    x = mesh.reference_positions if x is None else np.asarray(x)
    tris = mesh.flat_triangles()
    n = len(x)
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET POLYDATA", f"POINTS {n} double"]
    lines += [" ".join(_num(c) for c in p) for p in x]
    lines.append(f"POLYGONS {len(tris)} {4 * len(tris)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in tris]
    if point_data:
        lines.append(f"POINT_DATA {n}")
        for name, values in point_data.items():
            arr = np.asarray(values, dtype=float)
            if arr.shape == (n,):
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [_num(v) for v in arr]
            elif arr.shape == (n, 3):
                lines.append(f"VECTORS {name} double")
                lines += [" ".join(_num(c) for c in row) for row in arr]
            else:
                raise ValueError(f"point data {name!r} has shape {arr.shape}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk_points(path) -> np.ndarray:
    """Point coordinates of a legacy ASCII VTK file written by :func:`write_vtk`."""
    with open(path) as fh:
        tokens = fh.read().split()
    i = tokens.index("POINTS")
    n = int(tokens[i + 1])
    return np.array(tokens[i + 3 : i + 3 + 3 * n], dtype=float).reshape(n, 3)


def write_obj(path, mesh: SurfaceMesh, x: Optional[np.ndarray] = None) -> None:
    """Write corner vertices and flat corner triangles (1-based) as OBJ."""
    x = mesh.reference_positions if x is None else np.asarray(x)
    nv = mesh.num_vertices
    with open(path, "w") as fh:
        for p in x[:nv]:
            fh.write("v " + " ".join(_num(c) for c in p) + "\n")
        for a, b, c in mesh.triangles + 1:
            fh.write(f"f {a} {b} {c}\n")


def read_obj(path) -> SurfaceMesh:
    """Read an OBJ file with triangular faces into an order-1 mesh."""
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(c) for c in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                if len(idx) != 3:
                    raise ValueError(f"{path}:{lineno}: only triangular faces are supported")
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return SurfaceMesh(np.array(faces, dtype=np.int64).reshape(-1, 3), np.array(verts, dtype=float))


def write_csv(path, header, rows) -> None:
    """RFC-4180 CSV with full-precision floats."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return str(path)
