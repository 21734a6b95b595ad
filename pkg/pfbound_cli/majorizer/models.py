"""
Data models for the majorizer components.
"""
import hashlib
import math
import uuid
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..errors import DomainError

FEATURE_MAP_KINDS = ("block_one_hot", "identity_binary")
METHODS = ("pfb", "spfb", "lspfb", "sgd")
SCHEDULES = ("inv_t", "constant")
# where the curvature of a stochastic bound step comes from
CURVATURE_SOURCES = ("same", "independent")


@dataclass
class LabeledDataset:
    """Feature matrix (T x p) with 1-based class labels in [1, n]."""
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = "dataset"
    # Loader notes (dropped rows, label mapping, ...)
    source_info: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        self.labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if self.features.ndim != 2:
            raise DomainError(f"features must be a T x p matrix, got shape {self.features.shape}")
        T, p = self.features.shape
        if T < 1 or p < 1:
            raise DomainError(f"dataset needs T >= 1 and p >= 1, got T={T}, p={p}")
        if self.n_classes < 1:
            raise DomainError(f"n_classes must be >= 1, got {self.n_classes}")
        if self.labels.shape != (T,):
            raise DomainError(f"labels must have length {T}, got shape {self.labels.shape}")
        if not np.all(np.isfinite(self.features)):
            raise DomainError("features contain NaN or Inf")
        if self.labels.min() < 1 or self.labels.max() > self.n_classes:
            raise DomainError(f"labels must lie in [1, {self.n_classes}]")

    @property
    def T(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n(self) -> int:
        return self.n_classes

    @property
    def labels0(self) -> np.ndarray:
        """0-based labels for internal indexing."""
        return self.labels - 1

    def subset(self, index: np.ndarray, name: Optional[str] = None) -> "LabeledDataset":
        return LabeledDataset(
            features=self.features[index],
            labels=self.labels[index],
            n_classes=self.n_classes,
            name=name or self.name,
        )

    def fingerprint(self) -> str:
        """Content hash, stable across platforms (little-endian float64 / int64 bytes)."""
        h = hashlib.sha256()
        h.update(f"{self.T}:{self.p}:{self.n_classes}".encode("ascii"))
        h.update(self.features.astype("<f8").tobytes())
        h.update(self.labels.astype("<i8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class FeatureMap:
    """Joint feature map f_x(y).

    block_one_hot: x is placed in block y of an n*p vector.
    identity_binary: n == 2, f_x(1) = x and f_x(2) = -x, so d = p.
    """
    kind: str
    n: int
    p: int

    def __post_init__(self):
        if self.kind not in FEATURE_MAP_KINDS:
            raise DomainError(f"Unknown feature map kind: {self.kind}")
        if self.n < 1 or self.p < 1:
            raise DomainError(f"feature map needs n >= 1 and p >= 1, got n={self.n}, p={self.p}")
        if self.kind == "identity_binary" and self.n != 2:
            raise DomainError("identity_binary feature map requires n == 2")

    @property
    def d(self) -> int:
        return self.n * self.p if self.kind == "block_one_hot" else self.p

    @classmethod
    def for_dataset(cls, dataset: LabeledDataset, kind: str = "block_one_hot") -> "FeatureMap":
        return cls(kind=kind, n=dataset.n_classes, p=dataset.p)


@dataclass
class BoundExpansion:
    """Expansion point theta_tilde of a quadratic bound."""
    theta_tilde: np.ndarray

    def __post_init__(self):
        self.theta_tilde = np.asarray(self.theta_tilde, dtype=np.float64)
        if self.theta_tilde.ndim != 1:
            raise DomainError("theta_tilde must be a vector")
        if not np.all(np.isfinite(self.theta_tilde)):
            raise DomainError("theta_tilde contains NaN or Inf")


@dataclass
class BoundParams:
    """Quadratic surrogate z * exp(0.5 * D'Sigma D + D'mu), D = theta - theta_tilde."""
    log_z: float
    mu: np.ndarray
    sigma: np.ndarray
    expansion: Optional[BoundExpansion] = None
    # beta of every label after the first, in processing order
    betas: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def d(self) -> int:
        return self.mu.shape[0]


@dataclass
class LowRankBound:
    """Rank-k plus diagonal surrogate: curvature V'SV + D, S and D stored as diagonals."""
    V: np.ndarray
    S: np.ndarray
    D: np.ndarray
    mu: np.ndarray
    log_z: float

    @property
    def k(self) -> int:
        return self.V.shape[0]

    @property
    def d(self) -> int:
        return self.V.shape[1]

    def copy(self) -> "LowRankBound":
        return LowRankBound(self.V.copy(), self.S.copy(), self.D.copy(), self.mu.copy(), self.log_z)

    def dense(self) -> np.ndarray:
        """Dense V'SV + D (testing and small problems only)."""
        return (self.V.T * self.S) @ self.V + np.diag(self.D)

    def scaled(self, factor: float) -> "LowRankBound":
        """Curvature, shift and normalizer scaled by ``factor`` (V unchanged)."""
        return LowRankBound(self.V.copy(), self.S * factor, self.D * factor, self.mu * factor, self.log_z * factor)


@dataclass
class TrainConfig:
    """Hyperparameters of one training run."""
    method: str
    eta0: float
    lam: float
    batch_size: int = 1000
    epochs: int = 1
    seed: int = 0
    schedule: str = "inv_t"
    rank: Optional[int] = None
    eval_every: Optional[int] = None  # in samples; defaults to batch_size
    normalizer: str = "sample"
    curvature: str = "same"

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"Unknown method: {self.method}")
        if self.schedule not in SCHEDULES:
            raise DomainError(f"Unknown schedule: {self.schedule}")
        if self.curvature not in CURVATURE_SOURCES:
            raise DomainError(f"Unknown curvature source: {self.curvature}")
        if not (self.eta0 > 0 and math.isfinite(self.eta0)):
            raise DomainError(f"eta0 must be positive, got {self.eta0}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise DomainError(f"lambda must be >= 0, got {self.lam}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise DomainError(f"epochs must be >= 0, got {self.epochs}")
        if self.method == "lspfb" and (self.rank is None or self.rank < 1):
            raise DomainError("lspfb requires a rank >= 1")
        if self.eval_every is not None and self.eval_every < 1:
            raise DomainError(f"eval_every must be >= 1, got {self.eval_every}")

    @property
    def eval_interval(self) -> int:
        return self.eval_every or self.batch_size

    def as_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "eta0": self.eta0,
            "lambda": self.lam,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "schedule": self.schedule,
            "rank": self.rank,
            "eval_every": self.eval_interval,
            "normalizer": self.normalizer,
            "curvature": self.curvature,
        }


@dataclass
class MetricsRecord:
    """One evaluation point of a training run."""
    step: int
    epoch: float
    train_loss: float
    test_loss: float
    test_accuracy: float
    lr: float
    step_wall_time: float  # seconds spent in the last update


@dataclass
class MetricsTrace:
    """Evaluation records of a run, plus divergence and first-epoch diagnostics."""
    records: List[MetricsRecord] = field(default_factory=list)
    diverged: bool = False
    diagnostic: Optional[str] = None
    # max per-sample squared gradient norm seen during the first epoch
    sigma_sq: float = 0.0
    theta: Optional[np.ndarray] = None

    def append(self, record: MetricsRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise DomainError(f"metrics steps must increase: {record.step} after {self.records[-1].step}")
        if not (math.isfinite(record.train_loss) and math.isfinite(record.test_loss)):
            raise DomainError(f"non-finite loss at step {record.step}")
        self.records.append(record)

    @property
    def final(self) -> Optional[MetricsRecord]:
        return self.records[-1] if self.records else None

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class TheoryConstants:
    """Constants of the sub-linear rate guarantee for eta_t = eta0 / t."""
    mu1: float
    mu2: float
    lambda1: float
    lambda2: float
    eta0_min: float
    Q: float
    sigma_sq: float
    max_x_sq: float
    eta0: Optional[float] = None
    initial_gap: Optional[float] = None


@dataclass
class RunManifest:
    """Provenance written next to every metrics file."""
    config: Dict[str, Any]
    dataset_fingerprint: str
    code_version: str
    started_at: str
    finished_at: Optional[str] = None
    schema: str = "pfbound.metrics/1"
    columns: Tuple[str, ...] = ()
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class RunJob:
    """One (method spec, seed) cell of a comparison."""
    label: str
    config: TrainConfig


@dataclass
class RunOutcome:
    """Context and result of a single run executed by the RunManager."""
    run_id: str = field(default_factory=lambda: str(uuid.uuid4()))
    job: Optional[RunJob] = None

    start_time: Optional[datetime] = None
    end_time: Optional[datetime] = None

    status: str = "pending"  # pending, completed, diverged, failed
    error_message: Optional[str] = None
    trace: Optional[MetricsTrace] = None

    @property
    def duration(self) -> Optional[float]:
        """Run duration in seconds."""
        if self.start_time and self.end_time:
            return (self.end_time - self.start_time).total_seconds()
        return None

    @property
    def success(self) -> bool:
        """Whether the run finished without divergence or error."""
        return self.status == "completed" and self.error_message is None
