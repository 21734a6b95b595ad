"""
Quadratic upper bound on a log-linear partition function.

For an expansion point theta_tilde and the n feature vectors of one input,
``build_bound`` returns (log z, mu, Sigma) such that for every theta

    log Z_x(theta) <= log z + 0.5 * D'Sigma D + D'mu,   D = theta - theta_tilde,

with equality at theta = theta_tilde. Labels are processed in ascending order;
the first one is the exact z -> 0+ limit of the recursion. All ratios alpha/z are
handled as differences of logs.
"""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg.blas import dsyr
from scipy.special import expit, softmax

from ..errors import DomainError
from .linear_model import batch_features
from .models import BoundExpansion, BoundParams, FeatureMap

BETA_SERIES_CUTOFF = 1e-6
DEFAULT_CHUNK_SIZE = 256

BetaFn = Callable[[np.ndarray], np.ndarray]


def beta_of(u):
    """tanh(u/2) / (2u), with the series 1/4 - u^2/48 near u = 0."""
    u = np.asarray(u, dtype=np.float64)
    small = np.abs(u) < BETA_SERIES_CUTOFF
    safe = np.where(small, 1.0, u)
    out = np.where(small, 0.25 - u * u / 48.0, np.tanh(safe / 2.0) / (2.0 * safe))
    return out if out.ndim else float(out)


def _check_features(theta_tilde: np.ndarray, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    theta_tilde = np.asarray(theta_tilde, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise DomainError("feature list must be a nonempty (n, d) matrix")
    if theta_tilde.shape != (features.shape[1],):
        raise DomainError(f"theta_tilde has shape {theta_tilde.shape}, features have d={features.shape[1]}")
    if not (np.all(np.isfinite(theta_tilde)) and np.all(np.isfinite(features))):
        raise DomainError("bound inputs must be finite")
    return theta_tilde, features


def build_bound(
    theta_tilde: np.ndarray,
    features: np.ndarray,
    beta_fn: BetaFn = beta_of,
) -> BoundParams:
    """Build the quadratic bound of one input from its (n, d) feature list."""
    theta_tilde, features = _check_features(theta_tilde, features)
    n, d = features.shape
    s = features @ theta_tilde

    mu = features[0].copy()
    log_z = float(s[0])
    upper = np.zeros((d, d), order="F")
    betas = np.empty(n - 1)

    for y in range(1, n):
        u = float(s[y]) - log_z
        beta = float(beta_fn(u))
        betas[y - 1] = beta
        l = features[y] - mu
        upper = dsyr(beta, l, a=upper, overwrite_a=1)
        mu += expit(u) * l
        log_z = float(np.logaddexp(log_z, s[y]))

    sigma = np.triu(upper) + np.triu(upper, 1).T
    return BoundParams(
        log_z=log_z,
        mu=mu,
        sigma=np.ascontiguousarray(sigma),
        expansion=BoundExpansion(theta_tilde.copy()),
        betas=betas,
    )


def bound_value(b: BoundParams, theta: np.ndarray, theta_tilde: Optional[np.ndarray] = None) -> float:
    """log z + 0.5 * D'Sigma D + D'mu, in the log domain."""
    if theta_tilde is None:
        if b.expansion is None:
            raise DomainError("bound has no expansion point; pass theta_tilde")
        theta_tilde = b.expansion.theta_tilde
    theta = np.asarray(theta, dtype=np.float64)
    theta_tilde = np.asarray(theta_tilde, dtype=np.float64)
    if theta.shape != (b.d,) or theta_tilde.shape != (b.d,):
        raise DomainError(f"dimension mismatch: bound d={b.d}, theta {theta.shape}, theta_tilde {theta_tilde.shape}")
    delta = theta - theta_tilde
    return float(b.log_z + 0.5 * delta @ b.sigma @ delta + delta @ b.mu)


def batch_accumulate(bounds: Sequence[BoundParams]) -> Tuple[np.ndarray, np.ndarray]:
    """Elementwise sums of Sigma and mu over a batch of bounds."""
    if not bounds:
        raise DomainError("cannot accumulate an empty batch of bounds")
    d = bounds[0].d
    sigma_total = np.zeros((d, d))
    mu_total = np.zeros(d)
    for b in bounds:
        if b.d != d:
            raise DomainError(f"bounds of mixed dimension: {b.d} vs {d}")
        sigma_total += b.sigma
        mu_total += b.mu
    return sigma_total, mu_total


def softmax_mean_check(b: BoundParams, theta_tilde: np.ndarray, features: np.ndarray) -> float:
    """max |mu - sum_y softmax_y(theta_tilde'f) f_x(y)|."""
    theta_tilde, features = _check_features(theta_tilde, features)
    probs = softmax(features @ theta_tilde)
    return float(np.max(np.abs(b.mu - probs @ features)))


@dataclass
class BatchBounds:
    """Bounds of a batch built together: per-sample log z and mu, summed Sigma."""
    log_z: np.ndarray  # (B,)
    mu: np.ndarray  # (B, d)
    sigma_sum: np.ndarray  # (d, d)
    betas: np.ndarray  # (B, n - 1)
    sigmas: Optional[np.ndarray] = None  # (B, d, d), only when asked for

    @property
    def size(self) -> int:
        return self.log_z.shape[0]


def build_bounds_from_features(
    theta_tilde: np.ndarray,
    features: np.ndarray,
    beta_fn: BetaFn = beta_of,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    per_sample: bool = False,
) -> BatchBounds:
    """Vectorized ``build_bound`` over a (B, n, d) feature tensor.

    With ``per_sample`` the individual Sigma_j are kept as well as their sum.
    """
    theta_tilde = np.asarray(theta_tilde, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3 or features.shape[0] == 0 or features.shape[1] == 0:
        raise DomainError("batch features must be a nonempty (B, n, d) tensor")
    B, n, d = features.shape
    if theta_tilde.shape != (d,):
        raise DomainError(f"theta_tilde has shape {theta_tilde.shape}, features have d={d}")

    log_z = np.empty(B)
    mu = np.empty((B, d))
    betas = np.empty((B, n - 1))
    sigma_sum = np.zeros((d, d))
    sigmas = np.zeros((B, d, d)) if per_sample else None

    for start in range(0, B, chunk_size):
        F = features[start:start + chunk_size]
        s = F @ theta_tilde
        m = F[:, 0, :].copy()
        lz = s[:, 0].copy()
        for y in range(1, n):
            u = s[:, y] - lz
            beta = np.asarray(beta_fn(u), dtype=np.float64)
            betas[start:start + len(F), y - 1] = beta
            l = F[:, y, :] - m
            sigma_sum += (l * beta[:, None]).T @ l
            if sigmas is not None:
                sigmas[start:start + len(F)] += beta[:, None, None] * l[:, :, None] * l[:, None, :]
            m += expit(u)[:, None] * l
            lz = np.logaddexp(lz, s[:, y])
        log_z[start:start + len(F)] = lz
        mu[start:start + len(F)] = m

    return BatchBounds(
        log_z=log_z, mu=mu, sigma_sum=0.5 * (sigma_sum + sigma_sum.T), betas=betas, sigmas=sigmas
    )


def build_bounds_batch(
    theta_tilde: np.ndarray,
    X: np.ndarray,
    fmap: FeatureMap,
    beta_fn: BetaFn = beta_of,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    per_sample: bool = False,
) -> BatchBounds:
    """Bounds for every row of a raw input batch X at a shared expansion point."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DomainError("batch must be a nonempty (B, p) matrix")
    parts = []
    # Materialize features one chunk at a time; (B, n, d) can be large.
    for start in range(0, X.shape[0], chunk_size):
        feats = batch_features(fmap, X[start:start + chunk_size])
        parts.append(build_bounds_from_features(theta_tilde, feats, beta_fn, chunk_size, per_sample))
    if len(parts) == 1:
        return parts[0]
    return BatchBounds(
        log_z=np.concatenate([p.log_z for p in parts]),
        mu=np.concatenate([p.mu for p in parts]),
        sigma_sum=sum((p.sigma_sum for p in parts), np.zeros((fmap.d, fmap.d))),
        betas=np.concatenate([p.betas for p in parts]),
        sigmas=np.concatenate([p.sigmas for p in parts]) if per_sample else None,
    )

