"""
Brute-force references for tests and the check command.

Nothing here calls into the bound builders or the linear model helpers; every
value is recomputed from the definitions with plain numpy.
"""
from typing import Callable, Tuple

import numpy as np

from ..errors import DomainError, NumericalError

# Tolerance ladder shared by the test suites and the check command.
TOL_ENUMERATION = 1e-12
TOL_FINITE_DIFFERENCE = 1e-5
TOL_LINEAR_ALGEBRA = 1e-8
TOL_RESIDUAL = 1e-10


def exact_log_partition(theta: np.ndarray, features: np.ndarray) -> float:
    """log sum_y exp(theta'f(y)) by direct enumeration with a max shift."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[0] == 0:
        raise DomainError("need at least one label")
    s = features @ np.asarray(theta, dtype=np.float64)
    top = s.max()
    return float(top + np.log(np.sum(np.exp(s - top))))


def exact_softmax_mean(theta: np.ndarray, features: np.ndarray) -> np.ndarray:
    """sum_y p(y) f(y), the gradient of log Z at theta."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    s = features @ np.asarray(theta, dtype=np.float64)
    w = np.exp(s - s.max())
    return (w / w.sum()) @ features


def fd_gradient(fn: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences (fn(theta + h e_i) - fn(theta - h e_i)) / 2h."""
    if h <= 0:
        raise DomainError(f"step h must be positive, got {h}")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = h
        grad[i] = (fn(theta + step) - fn(theta - step)) / (2.0 * h)
    return grad


def dense_spd_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b for symmetric positive definite A via Cholesky."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"matrix is not positive definite: {exc}") from exc
    return np.linalg.solve(L.T, np.linalg.solve(L, b))


def dense_symmetric_eig(A: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and column eigenvectors of a symmetric matrix."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"matrix must be square, got shape {A.shape}")
    return np.linalg.eigh(0.5 * (A + A.T))


def dense_quadform(A: np.ndarray, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(x @ np.asarray(A, dtype=np.float64) @ x)
