"""Preconditioned conjugate gradients for the SPD systems of a time step."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
import scipy.sparse as sp


class CgConvergenceError(RuntimeError):
    """CG reached its iteration limit without meeting the tolerance."""

    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"CG did not converge in {iterations} iterations (residual {residual:.3e})")


@dataclass(frozen=True)
class CgConfig:
    """Stopping rule ``|A x - b| <= max(rtol |b|, atol)`` and preconditioner."""

    rtol: float = 1e-10
    atol: float = 1e-14
    max_iter: Optional[int] = None  # None -> 10 * N
    preconditioner: Literal["none", "jacobi"] = "jacobi"

    def __post_init__(self):
        if self.rtol <= 0 or self.atol < 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.preconditioner not in ("none", "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class CgResult:
    solution: np.ndarray
    iterations: int
    residual: np.ndarray
    history: list


def multi_rhs_solve(matrix: sp.spmatrix, rhs: np.ndarray, config: CgConfig = CgConfig(),
                    x0: Optional[np.ndarray] = None) -> CgResult:
    """Solve ``matrix @ X = rhs`` column by column with one shared preconditioner.

    The columns are iterated together but with independent step lengths, so
    each column follows the recursion of a single-vector CG run (up to the
    summation order of the batched dot products).
    ``residual`` holds the final Euclidean residual norm per column and
    ``history`` the residual norms after every iteration.
    """
    b = np.asarray(rhs, dtype=float)
    single = b.ndim == 1
    B = b[:, None] if single else b
    n, d = B.shape
    if matrix.shape != (n, n):
        raise ValueError(f"matrix shape {matrix.shape} does not match rhs length {n}")
    max_iter = config.max_iter or 10 * n
    if config.preconditioner == "jacobi":
        diag = matrix.diagonal()
        if np.any(diag <= 0):
            raise ValueError("Jacobi preconditioner needs a positive diagonal")
        inv_diag = (1.0 / diag)[:, None]
    else:
        inv_diag = np.ones((n, 1))

    X = np.zeros((n, d)) if x0 is None else np.array(x0, dtype=float).reshape(n, d)
    R = B - matrix @ X if x0 is not None else B.copy()
    target = np.maximum(config.rtol * np.linalg.norm(B, axis=0), config.atol)
    res = np.linalg.norm(R, axis=0)
    history = [res.copy()]
    active = res > target
    Z = inv_diag * R
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    it = 0
    while active.any() and it < max_iter:
        it += 1
        cols = np.flatnonzero(active)
        AP = matrix @ P[:, cols]
        pAp = np.einsum("ij,ij->j", P[:, cols], AP)
        alpha = rz[cols] / pAp
        X[:, cols] += alpha * P[:, cols]
        R[:, cols] -= alpha * AP
        res[cols] = np.linalg.norm(R[:, cols], axis=0)
        history.append(res.copy())
        active[cols] = res[cols] > target[cols]
        cols = np.flatnonzero(active)
        if cols.size == 0:
            break
        Z = inv_diag * R[:, cols]
        rz_new = np.einsum("ij,ij->j", R[:, cols], Z)
        beta = rz_new / rz[cols]
        rz[cols] = rz_new
        P[:, cols] = Z + beta * P[:, cols]
    if active.any():
        raise CgConvergenceError(float(res.max()), it)
    sol = X[:, 0] if single else X
    return CgResult(sol, it, res[0] if single else res, history)


def cg_solve(matrix: sp.spmatrix, rhs: np.ndarray, config: CgConfig = CgConfig(),
             x0: Optional[np.ndarray] = None) -> CgResult:
    """Solve one SPD system ``matrix @ x = rhs``."""
    b = np.asarray(rhs, dtype=float)
    if b.ndim != 1:
        raise ValueError("cg_solve takes a single right-hand side; use multi_rhs_solve")
    return multi_rhs_solve(matrix, b, config, x0)
