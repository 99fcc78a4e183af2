"""Small dense linear-algebra kernel used throughout the package.

Matrices are plain 2-D ``numpy.ndarray`` values; every routine here is a pure
function of its arguments.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.linalg.lapack import dpotrf, dpotrs

from .errors import InputError, SingularHessian

__all__ = [
    "as_matrix",
    "as_vector",
    "spd_solve",
    "spectral_norm",
    "sym_eig_extremes",
    "finite_diff_grad",
    "DIRECT_SOLVE_LIMIT",
]

# Above this dimension spd_solve switches from Cholesky to conjugate gradients.
DIRECT_SOLVE_LIMIT = 512


def as_matrix(x, rows: int | None = None, cols: int | None = None, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise InputError(f"{name} must be 2-D, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows or cols is not None and arr.shape[1] != cols:
        raise InputError(f"{name} has shape {arr.shape}, expected ({rows}, {cols})")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} has non-finite entries")
    return arr


def as_vector(x, size: int | None = None, name: str = "vector") -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise InputError(f"{name} must be 1-D, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise InputError(f"{name} has length {arr.shape[0]}, expected {size}")
    return arr


def _cg_solve(M: np.ndarray, rhs: np.ndarray, rtol: float, max_iter: int) -> np.ndarray:
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rr = r @ r
    target = (rtol * (1.0 + np.sqrt(rhs @ rhs))) ** 2
    for _ in range(max_iter):
        if rr <= target:
            return x
        Mp = M @ p
        curvature = p @ Mp
        if not curvature > 0.0:
            raise SingularHessian("non-positive curvature encountered in conjugate-gradient solve")
        step = rr / curvature
        x += step * p
        r -= step * Mp
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    if rr <= target:
        return x
    raise SingularHessian(f"conjugate gradients did not converge in {max_iter} iterations")


def spd_solve(M, rhs) -> np.ndarray:
    """Solve ``M x = rhs`` for symmetric positive definite ``M``.

    Uses a Cholesky factorization up to ``DIRECT_SOLVE_LIMIT`` unknowns and
    conjugate gradients beyond that. The inverse is never formed.

    Raises
    ------
    SingularHessian
        If ``M`` turns out not to be positive definite.
    """
    M = np.asarray(M, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    if M.shape != (n, n):
        raise InputError(f"matrix shape {M.shape} does not match right-hand side length {n}")
    if n <= DIRECT_SOLVE_LIMIT:
        # Raw LAPACK: this sits in the inner loop of every solver iteration.
        factor, info = dpotrf(M, lower=1, clean=0)
        if info != 0:
            raise SingularHessian(f"matrix is not positive definite (LAPACK potrf info={info})")
        x, info = dpotrs(factor, rhs, lower=1)
        if info != 0 or not math.isfinite(x.dot(x)):
            raise SingularHessian("Cholesky solve produced non-finite values")
        return x
    return _cg_solve(M, rhs, rtol=1e-12, max_iter=10 * n)


def spectral_norm(M) -> float:
    """Largest singular value of ``M`` (0 for the zero or empty matrix)."""
    M = as_matrix(M, name="M")
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def sym_eig_extremes(M) -> tuple[float, float]:
    """Return ``(lambda_min, lambda_max)`` of a symmetric matrix."""
    M = as_matrix(M, name="M")
    if M.shape[0] != M.shape[1]:
        raise InputError(f"matrix must be square, got {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > 1e-12 * scale:
        raise InputError("matrix is not symmetric")
    w = np.linalg.eigvalsh(M)
    return float(w[0]), float(w[-1])


def finite_diff_grad(fn: Callable[[np.ndarray], float], x, h: float) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if not h > 0:
        raise InputError("finite-difference step must be positive")
    x = as_vector(x, name="x")
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return grad
