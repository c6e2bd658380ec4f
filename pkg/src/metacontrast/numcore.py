"""Dense float64 vector helpers and a finite-difference gradient oracle.

Everything here is pure: same inputs give bitwise-identical outputs. The
hand-derived gradients elsewhere in the package are validated against
``finite_diff_grad``, so this module must stay free of clever rewrites that
would couple the oracle to the code under test.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DegenerateVectorError, DimensionError, OracleFailureError


def as_vector(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"expected a non-empty 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite entries")
    return arr


def as_matrix(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionError(f"expected a non-empty 2-d matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix has non-finite entries")
    return arr


def dot(a, b) -> float:
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.dot(a, b))


def norm(a) -> float:
    return float(np.linalg.norm(as_vector(a)))


def cosine(a, b) -> float:
    """Cosine similarity, clipped into [-1, 1] against rounding spill."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine of a zero-norm vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def l2_normalize(a) -> np.ndarray:
    a = as_vector(a)
    n = np.linalg.norm(a)
    if n == 0.0:
        raise DegenerateVectorError("cannot normalize a zero-norm vector")
    return a / n


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at ``x``.

    This is the reference oracle for every analytic gradient in the package.
    It deliberately evaluates ``f`` one coordinate at a time instead of
    reusing any package internals.
    """
    x = as_vector(x).copy()
    if h <= 0.0:
        raise ValueError("step size must be positive")
    grad = np.empty_like(x)
    for k in range(x.size):
        orig = x[k]
        x[k] = orig + h
        fp = float(f(x))
        x[k] = orig - h
        fm = float(f(x))
        x[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleFailureError(f"non-finite function value near coordinate {k}")
        grad[k] = (fp - fm) / (2.0 * h)
    return grad
