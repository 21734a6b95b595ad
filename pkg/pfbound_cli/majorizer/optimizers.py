"""
Update rules and training loops built on the partition function bounds.

Losses, directions and curvatures are averaged over the samples they cover, so a
mini-batch step solves (mean Sigma_j + lam I) v = mean(mu_j - f_j) + lam theta.
"""
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..errors import DivergenceError, DomainError, NumericalError
from ..logger import Logger
from .bound_full import DEFAULT_CHUNK_SIZE, BoundParams, beta_of, build_bounds_batch
from .bound_lowrank import build_lowrank_bound, woodbury_solve
from .linear_model import (
    accuracy,
    batch_features,
    batch_gradient,
    feature_diameter_sq,
    full_gradient,
    max_sq_norm,
    one_hot,
    pullback,
    regularized_loss,
    sample_gradients,
)
from .models import (
    FeatureMap,
    LabeledDataset,
    LowRankBound,
    MetricsRecord,
    MetricsTrace,
    TheoryConstants,
    TrainConfig,
)

logger = Logger()


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the only randomness source of a run."""
    return np.random.Generator(np.random.PCG64(seed))


def curvature_stream(seed: int) -> np.random.Generator:
    """Generator for independent curvature draws, disjoint from ``make_rng(seed)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed).spawn(1)[0]))


def lr_at(config: TrainConfig, t: int) -> float:
    """Learning rate of update t (1-based)."""
    if t < 1:
        raise DomainError(f"step index must be >= 1, got {t}")
    if config.schedule == "inv_t":
        return config.eta0 / t
    return config.eta0


def _preconditioned_step(theta: np.ndarray, sigma: np.ndarray, direction: np.ndarray, eta: float, lam: float) -> np.ndarray:
    A = sigma + lam * np.eye(sigma.shape[0])
    try:
        factor = cho_factor(A)
        v = cho_solve(factor, direction)
    except LinAlgError as exc:
        raise NumericalError(f"Sigma + lambda I is not positive definite (lambda={lam}): {exc}") from exc
    if not np.all(np.isfinite(v)):
        raise NumericalError("preconditioned direction is not finite")
    return theta - eta * v


def spfb_step(theta: np.ndarray, bound: BoundParams, f_true: np.ndarray, eta: float, lam: float) -> np.ndarray:
    """theta - eta (Sigma + lam I)^{-1} (mu - f + lam theta), by Cholesky."""
    theta = np.asarray(theta, dtype=np.float64)
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    direction = bound.mu - np.asarray(f_true, dtype=np.float64) + lam * theta
    return _preconditioned_step(theta, bound.sigma, direction, eta, lam)


def lspfb_step(theta: np.ndarray, state: LowRankBound, f_true: np.ndarray, eta: float, lam: float) -> np.ndarray:
    """theta - eta (V'SV + D + lam I)^{-1} (mu - f + lam theta), via Woodbury."""
    theta = np.asarray(theta, dtype=np.float64)
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    direction = state.mu - np.asarray(f_true, dtype=np.float64) + lam * theta
    return theta - eta * woodbury_solve(state.V, state.S, state.D + lam, direction)


def sgd_step(theta: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    return np.asarray(theta, dtype=np.float64) - eta * np.asarray(grad, dtype=np.float64)


def _observed_features(fmap: FeatureMap, X: np.ndarray, labels0: np.ndarray) -> np.ndarray:
    """Mean of f_{x_j}(y_j) over the batch."""
    return pullback(fmap, one_hot(labels0, fmap.n), X) / X.shape[0]


def _spfb_batch(
    theta: np.ndarray,
    X: np.ndarray,
    labels0: np.ndarray,
    eta: float,
    lam: float,
    fmap: FeatureMap,
    X_curvature: Optional[np.ndarray] = None,
) -> np.ndarray:
    bounds = build_bounds_batch(theta, X, fmap)
    if X_curvature is None:
        sigma = bounds.sigma_sum / X.shape[0]
    else:
        sigma = build_bounds_batch(theta, X_curvature, fmap).sigma_sum / X_curvature.shape[0]
    mean_bound = BoundParams(
        log_z=float(np.mean(bounds.log_z)),
        mu=bounds.mu.mean(axis=0),
        sigma=sigma,
    )
    return spfb_step(theta, mean_bound, _observed_features(fmap, X, labels0), eta, lam)


def _lspfb_batch(
    theta: np.ndarray,
    X: np.ndarray,
    labels0: np.ndarray,
    eta: float,
    lam: float,
    fmap: FeatureMap,
    rank: int,
    normalizer: str,
    X_curvature: Optional[np.ndarray] = None,
) -> np.ndarray:
    if X_curvature is None:
        state = build_lowrank_bound(theta, X, min(rank, fmap.d), fmap, normalizer=normalizer)
        state = state.scaled(1.0 / X.shape[0])
    else:
        state = build_lowrank_bound(theta, X_curvature, min(rank, fmap.d), fmap, normalizer=normalizer)
        state = state.scaled(1.0 / X_curvature.shape[0])
        # the shift always belongs to the batch the gradient is taken on
        state.mu = build_bounds_batch(theta, X, fmap).mu.mean(axis=0)
    return lspfb_step(theta, state, _observed_features(fmap, X, labels0), eta, lam)


def pfb_batch_step(theta: np.ndarray, dataset: LabeledDataset, eta: float, lam: float, fmap: FeatureMap) -> np.ndarray:
    """Full-data bound step: every sample's bound at theta, averaged, one solve."""
    if dataset.T == 0:
        raise DomainError("empty dataset")
    return _spfb_batch(np.asarray(theta, dtype=np.float64), dataset.features, dataset.labels0, eta, lam, fmap)


@dataclass
class ReferenceSolution:
    theta: np.ndarray
    loss: float
    iterations: int
    grad_norm: float
    converged: bool


def solve_reference(
    dataset: LabeledDataset,
    lam: float,
    fmap: FeatureMap,
    tol: float = 1e-10,
    max_iter: int = 20000,
    theta0: Optional[np.ndarray] = None,
) -> ReferenceSolution:
    """High-precision minimizer from full-data bound steps with eta = 1."""
    theta = np.zeros(fmap.d) if theta0 is None else np.asarray(theta0, dtype=np.float64).copy()
    grad_norm = float(np.linalg.norm(full_gradient(theta, dataset, lam, fmap)))
    iterations = 0
    while grad_norm > tol and iterations < max_iter:
        theta = pfb_batch_step(theta, dataset, 1.0, lam, fmap)
        iterations += 1
        grad_norm = float(np.linalg.norm(full_gradient(theta, dataset, lam, fmap)))
    converged = grad_norm <= tol
    loss = regularized_loss(theta, dataset, lam, fmap)
    if not converged:
        logger.warning(
            f"reference solve stopped after {iterations} iterations with |grad| = {grad_norm:.3e} > {tol:.1e}"
        )
    else:
        logger.debug(f"reference solve: L* = {loss:.12g} after {iterations} iterations")
    return ReferenceSolution(theta=theta, loss=loss, iterations=iterations, grad_norm=grad_norm, converged=converged)


def expected_bound_step(
    theta: np.ndarray,
    dataset: LabeledDataset,
    lam: float,
    fmap: FeatureMap,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> np.ndarray:
    """Mean over samples of (Sigma_j + lam I)^{-1} (mu_j - f_j + lam theta).

    This is the expected direction of a single-sample bound step whose curvature
    comes from the same sample as its gradient. Preconditioner and gradient are
    correlated, so it vanishes where such steps settle, not where the gradient
    of the loss vanishes.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if dataset.T == 0:
        raise DomainError("empty dataset")
    if not lam > 0:
        raise DomainError(f"per-sample curvature is singular without regularization (lambda={lam})")
    eye = np.eye(fmap.d)
    total = np.zeros(fmap.d)
    for start in range(0, dataset.T, chunk_size):
        X = dataset.features[start:start + chunk_size]
        labels0 = dataset.labels0[start:start + chunk_size]
        bounds = build_bounds_batch(theta, X, fmap, per_sample=True)
        f_true = batch_features(fmap, X)[np.arange(X.shape[0]), labels0]
        rhs = bounds.mu - f_true + lam * theta
        try:
            v = np.linalg.solve(bounds.sigmas + lam * eye, rhs[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"per-sample preconditioner is singular: {exc}") from exc
        total += v.sum(axis=0)
    return total / dataset.T


@dataclass
class FixedPoint:
    theta: np.ndarray
    loss: float
    iterations: int
    residual: float
    converged: bool


def solve_fixed_point(
    dataset: LabeledDataset,
    lam: float,
    fmap: FeatureMap,
    tol: float = 1e-9,
    max_iter: int = 2000,
    theta0: Optional[np.ndarray] = None,
) -> FixedPoint:
    """Zero of ``expected_bound_step`` by damped fixed-point iteration.

    The step length halves whenever the residual would grow and doubles back
    towards 1 after every accepted step.
    """
    theta = np.zeros(fmap.d) if theta0 is None else np.asarray(theta0, dtype=np.float64).copy()
    direction = expected_bound_step(theta, dataset, lam, fmap)
    residual = float(np.linalg.norm(direction))
    eta = 1.0
    iterations = 0
    while residual > tol and iterations < max_iter:
        iterations += 1
        candidate = theta - eta * direction
        candidate_direction = expected_bound_step(candidate, dataset, lam, fmap)
        candidate_residual = float(np.linalg.norm(candidate_direction))
        if candidate_residual < residual:
            theta, direction, residual = candidate, candidate_direction, candidate_residual
            eta = min(1.0, 2.0 * eta)
            continue
        eta *= 0.5
        if eta < 1e-10:
            break
    converged = residual <= tol
    loss = regularized_loss(theta, dataset, lam, fmap)
    if not converged:
        logger.warning(f"fixed-point solve stopped after {iterations} iterations with residual {residual:.3e}")
    else:
        logger.debug(f"fixed point: L = {loss:.12g} after {iterations} iterations")
    return FixedPoint(theta=theta, loss=loss, iterations=iterations, residual=residual, converged=converged)


def _evaluate(
    theta: np.ndarray,
    step: int,
    samples_seen: int,
    lr: float,
    wall: float,
    config: TrainConfig,
    train_set: LabeledDataset,
    test_set: Optional[LabeledDataset],
    fmap: FeatureMap,
) -> MetricsRecord:
    train_loss = regularized_loss(theta, train_set, config.lam, fmap)
    if test_set is not None:
        test_loss = regularized_loss(theta, test_set, 0.0, fmap)
        test_acc = accuracy(theta, test_set, fmap)
    else:
        test_loss, test_acc = train_loss, accuracy(theta, train_set, fmap)
    return MetricsRecord(
        step=step,
        epoch=samples_seen / train_set.T,
        train_loss=train_loss,
        test_loss=test_loss,
        test_accuracy=test_acc,
        lr=lr,
        step_wall_time=wall,
    )


def _batches(config: TrainConfig, T: int, rng: np.random.Generator) -> Iterable[np.ndarray]:
    for _ in range(config.epochs):
        if config.method == "pfb":
            yield np.arange(T)
            continue
        order = rng.permutation(T)
        for start in range(0, T, config.batch_size):
            yield order[start:start + config.batch_size]


def train(
    config: TrainConfig,
    train_set: LabeledDataset,
    test_set: Optional[LabeledDataset],
    fmap: FeatureMap,
    eval_steps: Optional[Sequence[int]] = None,
    on_record: Optional[Callable[[MetricsRecord], None]] = None,
    on_theta: Optional[Callable[[int, np.ndarray], None]] = None,
) -> MetricsTrace:
    """Run one training configuration from theta = 0.

    Records are taken at step 0, whenever another ``eval_every`` samples have
    been consumed, and after the final update. With ``eval_steps`` records are
    taken exactly at those update indices instead. A non-finite loss or
    parameter stops the run and marks the trace as diverged.

    With ``config.curvature == "independent"`` the bound steps take their
    curvature from a second batch of the same size, drawn with replacement
    from a separate stream, while the shift and the observed features come
    from the current batch. ``on_theta(step, theta)`` sees the parameters at
    every record.
    """
    if train_set.n_classes != fmap.n or train_set.p != fmap.p:
        raise DomainError(f"dataset (n={train_set.n_classes}, p={train_set.p}) does not match the feature map")
    if config.method == "lspfb" and config.rank > fmap.d:
        raise DomainError(f"rank {config.rank} exceeds parameter dimension {fmap.d}")

    rng = make_rng(config.seed)
    curvature_rng = curvature_stream(config.seed) if config.curvature == "independent" else None
    theta = np.zeros(fmap.d)
    trace = MetricsTrace()
    wanted = set(int(s) for s in eval_steps) if eval_steps is not None else None

    def record(rec: MetricsRecord) -> None:
        trace.append(rec)
        if on_record is not None:
            on_record(rec)
        if on_theta is not None:
            on_theta(rec.step, theta)

    record(_evaluate(theta, 0, 0, lr_at(config, 1), 0.0, config, train_set, test_set, fmap))

    T = train_set.T
    total_updates = config.epochs * (1 if config.method == "pfb" else math.ceil(T / config.batch_size))
    interval = config.eval_interval
    next_eval = interval
    samples_seen = 0
    first_epoch_end = T

    for t, idx in enumerate(_batches(config, T, rng), start=1):
        X = train_set.features[idx]
        labels0 = train_set.labels0[idx]
        eta = lr_at(config, t)
        X_curvature = None
        if curvature_rng is not None and config.method in ("spfb", "lspfb"):
            X_curvature = train_set.features[curvature_rng.integers(0, T, size=len(idx))]

        if samples_seen < first_epoch_end:
            grads = sample_gradients(theta, X, labels0, config.lam, fmap)
            trace.sigma_sq = max(trace.sigma_sq, float(np.max(np.einsum("ij,ij->i", grads, grads))))

        started = time.perf_counter()
        try:
            if config.method == "sgd":
                theta = sgd_step(theta, batch_gradient(theta, X, labels0, config.lam, fmap), eta)
            elif config.method == "lspfb":
                theta = _lspfb_batch(
                    theta, X, labels0, eta, config.lam, fmap, config.rank, config.normalizer, X_curvature
                )
            else:
                theta = _spfb_batch(theta, X, labels0, eta, config.lam, fmap, X_curvature)
        except NumericalError as exc:
            trace.diverged = True
            trace.diagnostic = f"step {t}: {exc}"
            break
        wall = time.perf_counter() - started
        samples_seen += len(idx)

        if not np.all(np.isfinite(theta)):
            trace.diverged = True
            trace.diagnostic = f"step {t}: parameters became non-finite (lr={eta:.6g})"
            break

        if wanted is not None:
            due = t in wanted
        else:
            due = samples_seen >= next_eval or t == total_updates
            while next_eval <= samples_seen:
                next_eval += interval
        if not due:
            continue

        rec = _evaluate(theta, t, samples_seen, eta, wall, config, train_set, test_set, fmap)
        if not (math.isfinite(rec.train_loss) and math.isfinite(rec.test_loss)):
            trace.diverged = True
            trace.diagnostic = f"step {t}: non-finite loss (train={rec.train_loss}, test={rec.test_loss})"
            break
        record(rec)

    trace.theta = theta
    if trace.diverged:
        logger.warning(f"{config.method} seed={config.seed} diverged: {trace.diagnostic}")
    return trace


def theory_constants(
    dataset: LabeledDataset,
    lam: float,
    fmap: FeatureMap,
    sigma_sq: float = 0.0,
    eta0: Optional[float] = None,
    initial_gap: Optional[float] = None,
    n: Optional[int] = None,
) -> TheoryConstants:
    """Preconditioner spectrum bounds, learning-rate threshold and Q(eta0) for eta_t = eta0/t."""
    n = dataset.n_classes if n is None else n
    if n < 2:
        raise DomainError(f"theory constants need n >= 2, got n={n}")
    if not lam > 0:
        raise DomainError(f"theory constants need lambda > 0, got {lam}")
    max_x_sq = max_sq_norm(dataset)
    if max_x_sq <= 0:
        raise DomainError("all inputs are zero; max ||x||^2 must be positive")

    mu1 = 1.0 / (math.sqrt(n / 2.0) * max_x_sq + lam)
    beta_min = beta_of(math.log(1.0 / n))
    mu2 = 1.0 / ((1.0 + 1.0 / n) * beta_min * max_x_sq + lam)
    lambda1 = lam
    lambda2 = lam + 0.25 * feature_diameter_sq(dataset, fmap)
    eta0_min = 1.0 / (2.0 * mu1 * lambda1)

    Q = math.nan
    if eta0 is not None:
        if eta0 <= eta0_min:
            Q = math.inf
        else:
            noise_term = lambda2 * mu2 ** 2 * eta0 ** 2 * sigma_sq / (2.0 * (2.0 * mu1 * lambda1 * eta0 - 1.0))
            Q = max(noise_term, initial_gap if initial_gap is not None else 0.0)

    return TheoryConstants(
        mu1=mu1,
        mu2=mu2,
        lambda1=lambda1,
        lambda2=lambda2,
        eta0_min=eta0_min,
        Q=Q,
        sigma_sq=sigma_sq,
        max_x_sq=max_x_sq,
        eta0=eta0,
        initial_gap=initial_gap,
    )


def log_spaced_steps(t_min: int, t_max: int, points: int) -> List[int]:
    """Distinct integer steps, log-spaced over [t_min, t_max]."""
    if t_min < 1 or t_max < t_min or points < 2:
        raise DomainError(f"bad step window [{t_min}, {t_max}] with {points} points")
    return sorted(set(int(round(v)) for v in np.geomspace(t_min, t_max, points)))


def rate_slope(steps: Sequence[float], gaps: Sequence[float], t_min: float, t_max: float) -> float:
    """Least-squares slope of log gap against log step over [t_min, t_max]."""
    steps = np.asarray(steps, dtype=np.float64)
    gaps = np.asarray(gaps, dtype=np.float64)
    mask = (steps >= t_min) & (steps <= t_max) & (gaps > 0) & np.isfinite(gaps)
    if mask.sum() < 2:
        raise DomainError("need at least two positive gaps inside the window to fit a slope")
    slope, _ = np.polyfit(np.log(steps[mask]), np.log(gaps[mask]), 1)
    return float(slope)


@dataclass
class RateResult:
    batch_size: int
    eta0: float
    steps: List[int]
    mean_gap: List[float]
    slope: float
    diverged_seeds: List[int]
    curvature: str = "same"
    # mean ||theta_t - anchor||^2 at each step, when an anchor was given
    mean_sq_dist: List[float] = field(default_factory=list)
    dist_slope: Optional[float] = None


def empirical_rate(
    train_set: LabeledDataset,
    fmap: FeatureMap,
    lam: float,
    eta0: float,
    batch_size: int,
    seeds: Sequence[int],
    steps: Sequence[int],
    reference_loss: float,
    curvature: str = "same",
    anchor: Optional[np.ndarray] = None,
) -> RateResult:
    """Mean suboptimality of SPFB with eta_t = eta0/t at the given update indices.

    With ``anchor`` the mean squared distance to it is tracked as well. Passing
    the point the iteration actually settles at (``solve_fixed_point`` for
    same-sample curvature, the minimizer for independent curvature) separates
    the noise decay from a constant bias in the loss gap.
    """
    steps = sorted(int(s) for s in steps)
    per_epoch = math.ceil(train_set.T / batch_size)
    epochs = math.ceil(steps[-1] / per_epoch)
    gaps = np.zeros(len(steps))
    dists = np.zeros(len(steps))
    counted = 0
    diverged: List[int] = []
    for seed in seeds:
        config = TrainConfig(
            method="spfb", eta0=eta0, lam=lam, batch_size=batch_size, epochs=epochs, seed=seed,
            schedule="inv_t", curvature=curvature,
        )
        seen = {}

        def track(step: int, theta: np.ndarray) -> None:
            if anchor is not None:
                seen[step] = float(np.sum((theta - anchor) ** 2))

        trace = train(config, train_set, None, fmap, eval_steps=steps, on_theta=track)
        if trace.diverged:
            diverged.append(seed)
            continue
        by_step = {r.step: r.train_loss for r in trace.records}
        gaps += np.array([by_step[s] - reference_loss for s in steps])
        if anchor is not None:
            dists += np.array([seen[s] for s in steps])
        counted += 1
    if counted == 0:
        raise DivergenceError("every seed diverged; no rate can be estimated")
    mean_gap = gaps / counted
    slope = rate_slope(steps, mean_gap, steps[0], steps[-1])
    mean_sq_dist: List[float] = []
    dist_slope = None
    if anchor is not None:
        mean_sq_dist = [float(v) for v in dists / counted]
        dist_slope = rate_slope(steps, mean_sq_dist, steps[0], steps[-1])
    return RateResult(
        batch_size=batch_size,
        eta0=eta0,
        steps=steps,
        mean_gap=[float(g) for g in mean_gap],
        slope=slope,
        diverged_seeds=diverged,
        curvature=curvature,
        mean_sq_dist=mean_sq_dist,
        dist_slope=dist_slope,
    )
