"""
Rank-k plus diagonal majorizer of the partition function bound curvature.

The state keeps V (k x d, orthonormal rows), S and D (diagonals) so that
x'(V'SV + D)x >= x'Sigma x for the full-rank Sigma built from the same inputs in
the same label order. Each label contributes one rank-1 term r r'; it is absorbed
into the sketch, and whatever no longer fits is pushed onto D with a diagonal
compensation that keeps the inequality.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh
from scipy.special import expit

from ..errors import DomainError, NumericalError
from .bound_full import BetaFn, beta_of
from .linear_model import batch_features
from .models import FeatureMap, LowRankBound

IN_SPAN_TOL = 1e-12
S_CLAMP = 1e-12
NORMALIZERS = ("sample", "global")


@dataclass
class Eviction:
    """Direction dropped from the sketch by one absorb, with its eigenvalue."""
    c: float
    v: np.ndarray
    # 1: the new orthogonal component itself went to the diagonal
    # 2: an existing sketch row was replaced
    case: int
    index: Optional[int] = None


def lowrank_init(k: int, d: int) -> LowRankBound:
    """Canonical rows for V, zero S and D, zero mu, log z = -inf."""
    if d < 1 or k < 1 or k > d:
        raise DomainError(f"rank must satisfy 1 <= k <= d, got k={k}, d={d}")
    return LowRankBound(
        V=np.eye(k, d),
        S=np.zeros(k),
        D=np.zeros(d),
        mu=np.zeros(d),
        log_z=-np.inf,
    )


def jensen_compensation(c: float, v: np.ndarray) -> np.ndarray:
    """Diagonal F with F_i = c |v_i| sum_j |v_j|, so that x'Fx >= c (x'v)^2."""
    av = np.abs(v)
    return c * av * av.sum()


def _absorb(state: LowRankBound, r: np.ndarray) -> Optional[Eviction]:
    """In-place rank-1 absorption of r r'; returns what was evicted, if anything."""
    if not np.any(r):
        return None

    V = state.V
    p = V @ r
    g = r - V.T @ p
    # second Gram-Schmidt pass keeps g orthogonal to the rows of V
    correction = V @ g
    g -= V.T @ correction
    p += correction
    a = r - g

    if np.any(p):
        w, Q = eigh(np.diag(state.S) + np.outer(p, p))
        state.S = np.clip(w, 0.0, None)
        state.V = Q.T @ V

    g_norm = float(np.linalg.norm(g))
    state.D += g_norm * float(np.linalg.norm(a))

    if g_norm <= IN_SPAN_TOL:
        return None

    g_sq = g_norm * g_norm
    smallest = float(state.S.min())
    if g_sq <= smallest:
        state.D += jensen_compensation(1.0, g)
        return Eviction(c=g_sq, v=g / g_norm, case=1)

    kk = int(np.argmin(state.S))
    c = float(state.S[kk])
    v = state.V[kk].copy()
    state.D += jensen_compensation(c, v)
    state.V[kk] = g / g_norm
    state.S[kk] = g_sq
    return Eviction(c=c, v=v, case=2, index=kk)


def lowrank_absorb(state: LowRankBound, r: np.ndarray) -> LowRankBound:
    """Absorb one rank-1 term into a copy of ``state``."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (state.d,):
        raise DomainError(f"r must have length {state.d}, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise DomainError("r contains NaN or Inf")
    out = state.copy()
    _absorb(out, r.copy())
    return out


def build_lowrank_from_features(
    theta_tilde: np.ndarray,
    features: np.ndarray,
    k: int,
    normalizer: str = "sample",
    beta_fn: BetaFn = beta_of,
    evictions: Optional[List[Eviction]] = None,
) -> LowRankBound:
    """Low-rank bound of a batch given as a (B, n, d) feature tensor.

    ``normalizer="sample"`` references each label to the running normalizer of
    its own sample. ``"global"`` references it to the summed normalizer of the
    samples already processed; that variant is not a valid bound and exists
    for comparison runs only.
    """
    if normalizer not in NORMALIZERS:
        raise DomainError(f"normalizer must be one of {NORMALIZERS}, got {normalizer!r}")
    theta_tilde = np.asarray(theta_tilde, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3 or features.shape[0] == 0 or features.shape[1] == 0:
        raise DomainError("low-rank bound needs a nonempty batch")
    B, n, d = features.shape
    if theta_tilde.shape != (d,):
        raise DomainError(f"theta_tilde has shape {theta_tilde.shape}, features have d={d}")
    if not (np.all(np.isfinite(theta_tilde)) and np.all(np.isfinite(features))):
        raise DomainError("bound inputs must be finite")

    state = lowrank_init(k, d)
    scores = features @ theta_tilde
    log_z_prev = -np.inf

    for j in range(B):
        F = features[j]
        s = scores[j]
        upsilon = F[0].copy()
        log_zj = float(s[0])
        for y in range(1, n):
            u = float(s[y]) - log_zj
            if normalizer == "sample":
                beta = float(beta_fn(u))
            elif np.isfinite(log_z_prev):
                beta = float(beta_fn(float(s[y]) - log_z_prev))
            else:
                beta = 0.0
            l = F[y] - upsilon
            if beta > 0.0:
                eviction = _absorb(state, np.sqrt(beta) * l)
                if evictions is not None and eviction is not None:
                    evictions.append(eviction)
            upsilon += expit(u) * l
            log_zj = float(np.logaddexp(log_zj, s[y]))
        state.mu += upsilon
        state.log_z = log_zj if j == 0 else state.log_z + log_zj
        log_z_prev = float(np.logaddexp(log_z_prev, log_zj))

    return state


def build_lowrank_bound(
    theta_tilde: np.ndarray,
    X: np.ndarray,
    k: int,
    fmap: FeatureMap,
    normalizer: str = "sample",
    beta_fn: BetaFn = beta_of,
) -> LowRankBound:
    """Low-rank bound for a batch of raw inputs (rows of X).

    log z of the result is the sum of the per-sample log normalizers and mu the
    sum of the per-sample shifts.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DomainError("low-rank bound needs a nonempty batch")
    return build_lowrank_from_features(theta_tilde, batch_features(fmap, X), k, normalizer, beta_fn)


def lowrank_quadform(state: LowRankBound, x: np.ndarray) -> float:
    """x'(V'SV + D)x in O(kd)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (state.d,):
        raise DomainError(f"x must have length {state.d}, got shape {x.shape}")
    p = state.V @ x
    return float(state.S @ (p * p) + state.D @ (x * x))


def lowrank_bound_value(state: LowRankBound, theta: np.ndarray, theta_tilde: np.ndarray) -> float:
    """log z + 0.5 * quadform(D) + D'mu with D = theta - theta_tilde."""
    theta = np.asarray(theta, dtype=np.float64)
    theta_tilde = np.asarray(theta_tilde, dtype=np.float64)
    if theta_tilde.shape != (state.d,):
        raise DomainError(f"theta_tilde must have length {state.d}, got shape {theta_tilde.shape}")
    delta = theta - theta_tilde
    return float(state.log_z + 0.5 * lowrank_quadform(state, delta) + delta @ state.mu)


def woodbury_solve(V: np.ndarray, S: np.ndarray, D: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """(V'SV + D)^{-1} rhs via the Woodbury identity.

    S entries below 1e-12 are clamped to 1e-12. Work is O(k^3 + kd).
    """
    V = np.asarray(V, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    k, d = V.shape
    if S.shape != (k,) or D.shape != (d,) or rhs.shape != (d,):
        raise DomainError(f"shape mismatch: V {V.shape}, S {S.shape}, D {D.shape}, rhs {rhs.shape}")
    if not np.all(D > 0):
        raise DomainError("D must be strictly positive")

    d_inv = 1.0 / D
    y = d_inv * rhs
    VDinv = V * d_inv
    inner = np.diag(1.0 / np.maximum(S, S_CLAMP)) + VDinv @ V.T
    try:
        factor = cho_factor(inner)
        w = cho_solve(factor, V @ y)
    except LinAlgError as exc:
        raise NumericalError(f"Woodbury inner system is not positive definite: {exc}") from exc
    out = y - VDinv.T @ w
    if not np.all(np.isfinite(out)):
        raise NumericalError("Woodbury solve produced non-finite values")
    return out


def cross_term_eigencheck(a: np.ndarray, g: np.ndarray, tol: float = 1e-10) -> Tuple[float, float]:
    """Extreme eigenvalues of a g' + g a' for orthogonal nonzero a, g."""
    a = np.asarray(a, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if a.shape != g.shape or a.ndim != 1:
        raise DomainError("a and g must be vectors of equal length")
    if not (np.any(a) and np.any(g)):
        raise DomainError("a and g must both be nonzero")
    if abs(float(a @ g)) > tol * max(1.0, float(np.linalg.norm(a) * np.linalg.norm(g))):
        raise DomainError(f"a and g are not orthogonal: a'g = {float(a @ g):.3e}")
    M = np.outer(a, g)
    w = eigh(M + M.T, eigvals_only=True)
    return float(w[-1]), float(w[0])
