"""
Log-linear model: joint feature maps, exact partition function, loss, gradients and prediction.

Labels are 1-based at the public boundary (``feature_vector``, ``sample_gradient``,
``LabeledDataset.labels``) and 0-based in the batched helpers that take ``labels0``.
The loss is averaged over the T samples.
"""
import numpy as np
from scipy.special import logsumexp, softmax

from ..errors import DomainError
from .models import FeatureMap, LabeledDataset


def _check_class(fmap: FeatureMap, y: int) -> int:
    if not 1 <= int(y) <= fmap.n:
        raise DomainError(f"class index {y} outside [1, {fmap.n}]")
    return int(y) - 1


def _check_theta(fmap: FeatureMap, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (fmap.d,):
        raise DomainError(f"theta must have length {fmap.d}, got shape {theta.shape}")
    return theta


def _as_rows(fmap: FeatureMap, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != fmap.p:
        raise DomainError(f"inputs must have {fmap.p} columns, got shape {X.shape}")
    return X


def feature_vector(fmap: FeatureMap, x: np.ndarray, y: int) -> np.ndarray:
    """f_x(y) in R^d for a 1-based class y."""
    y0 = _check_class(fmap, y)
    x = _as_rows(fmap, x)[0]
    if fmap.kind == "identity_binary":
        return x.copy() if y0 == 0 else -x
    out = np.zeros(fmap.d)
    out[y0 * fmap.p:(y0 + 1) * fmap.p] = x
    return out


def feature_list(fmap: FeatureMap, x: np.ndarray) -> np.ndarray:
    """All n feature vectors of one input, stacked as an (n, d) matrix."""
    return batch_features(fmap, _as_rows(fmap, x))[0]


def batch_features(fmap: FeatureMap, X: np.ndarray) -> np.ndarray:
    """Feature tensor of shape (B, n, d) for a batch of raw inputs."""
    X = _as_rows(fmap, X)
    B = X.shape[0]
    if fmap.kind == "identity_binary":
        return np.stack([X, -X], axis=1)
    out = np.zeros((B, fmap.n, fmap.n, fmap.p))
    idx = np.arange(fmap.n)
    out[:, idx, idx, :] = X[:, None, :]
    return out.reshape(B, fmap.n, fmap.d)


def scores(theta: np.ndarray, X: np.ndarray, fmap: FeatureMap) -> np.ndarray:
    """Class scores theta'f_x(y) as a (B, n) matrix."""
    theta = _check_theta(fmap, theta)
    X = _as_rows(fmap, X)
    if fmap.kind == "identity_binary":
        s = X @ theta
        return np.stack([s, -s], axis=1)
    return X @ theta.reshape(fmap.n, fmap.p).T


def pullback(fmap: FeatureMap, weights: np.ndarray, X: np.ndarray) -> np.ndarray:
    """sum_j sum_y weights[j, y] * f_{x_j}(y), without materializing features."""
    X = _as_rows(fmap, X)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (X.shape[0], fmap.n):
        raise DomainError(f"weights must have shape {(X.shape[0], fmap.n)}, got {weights.shape}")
    if fmap.kind == "identity_binary":
        return X.T @ (weights[:, 0] - weights[:, 1])
    return (weights.T @ X).ravel()


def one_hot(labels0: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((len(labels0), n))
    out[np.arange(len(labels0)), labels0] = 1.0
    return out


def log_partition(theta: np.ndarray, x: np.ndarray, fmap: FeatureMap) -> float:
    """log Z_x(theta), max-shifted."""
    return float(logsumexp(scores(theta, x, fmap)[0]))


def predict_proba(theta: np.ndarray, x: np.ndarray, fmap: FeatureMap) -> np.ndarray:
    """p(y | x, theta) over the n classes."""
    X = np.asarray(x, dtype=np.float64)
    probs = softmax(scores(theta, X, fmap), axis=1)
    return probs[0] if X.ndim == 1 else probs


def per_sample_losses(theta: np.ndarray, X: np.ndarray, labels0: np.ndarray, fmap: FeatureMap) -> np.ndarray:
    """Unregularized log Z_x(theta) - theta'f_x(y) for every row."""
    s = scores(theta, X, fmap)
    return logsumexp(s, axis=1) - s[np.arange(s.shape[0]), labels0]


def regularized_loss(theta: np.ndarray, dataset: LabeledDataset, lam: float, fmap: FeatureMap) -> float:
    """(1/T) sum_t [log Z_{x_t} - theta'f_{x_t}(y_t)] + (lam/2) ||theta||^2."""
    if dataset.T == 0:
        raise DomainError("empty dataset")
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    theta = _check_theta(fmap, theta)
    data_term = float(np.mean(per_sample_losses(theta, dataset.features, dataset.labels0, fmap)))
    return data_term + 0.5 * lam * float(theta @ theta)


def sample_gradient(theta: np.ndarray, x: np.ndarray, y: int, lam: float, fmap: FeatureMap) -> np.ndarray:
    """E_p[f_x] - f_x(y) + lam * theta for one sample."""
    y0 = _check_class(fmap, y)
    return sample_gradients(theta, _as_rows(fmap, x), np.array([y0]), lam, fmap)[0]


def sample_gradients(
    theta: np.ndarray, X: np.ndarray, labels0: np.ndarray, lam: float, fmap: FeatureMap
) -> np.ndarray:
    """Per-sample regularized gradients, shape (B, d)."""
    theta = _check_theta(fmap, theta)
    X = _as_rows(fmap, X)
    resid = softmax(scores(theta, X, fmap), axis=1) - one_hot(labels0, fmap.n)
    if fmap.kind == "identity_binary":
        grads = (resid[:, 0] - resid[:, 1])[:, None] * X
    else:
        grads = (resid[:, :, None] * X[:, None, :]).reshape(X.shape[0], fmap.d)
    return grads + lam * theta


def batch_gradient(
    theta: np.ndarray, X: np.ndarray, labels0: np.ndarray, lam: float, fmap: FeatureMap
) -> np.ndarray:
    """Gradient of the batch-averaged regularized loss."""
    theta = _check_theta(fmap, theta)
    X = _as_rows(fmap, X)
    resid = softmax(scores(theta, X, fmap), axis=1) - one_hot(labels0, fmap.n)
    return pullback(fmap, resid, X) / X.shape[0] + lam * theta


def full_gradient(theta: np.ndarray, dataset: LabeledDataset, lam: float, fmap: FeatureMap) -> np.ndarray:
    return batch_gradient(theta, dataset.features, dataset.labels0, lam, fmap)


def predict(theta: np.ndarray, X: np.ndarray, fmap: FeatureMap) -> np.ndarray:
    """1-based predicted classes; ties go to the lowest class."""
    return np.argmax(scores(theta, X, fmap), axis=1) + 1


def accuracy(theta: np.ndarray, dataset: LabeledDataset, fmap: FeatureMap) -> float:
    return float(np.mean(predict(theta, dataset.features, fmap) == dataset.labels))


def max_sq_norm(dataset: LabeledDataset) -> float:
    """max_t ||x_t||^2 over the raw inputs."""
    return float(np.max(np.einsum("ij,ij->i", dataset.features, dataset.features)))


def feature_diameter_sq(dataset: LabeledDataset, fmap: FeatureMap) -> float:
    """max_x max_{y,y'} ||f_x(y) - f_x(y')||^2."""
    if fmap.n < 2:
        return 0.0
    scale = 4.0 if fmap.kind == "identity_binary" else 2.0
    return scale * max_sq_norm(dataset)
