"""
Dataset ingestion, synthetic problems, and train/test splitting.

All randomness comes from numpy's PCG64 generator seeded with a single integer.
"""

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from scipy.special import softmax

from .errors import DomainError, ParseError
from .logger import Logger
from .majorizer.models import LabeledDataset

logger = Logger()

FORMATS = ("svmlight", "csv", "synth")
SCALES = ("none", "unit_norm", "standardize")
CATEGORICALS = ("error", "integer", "one_hot")
SYNTH_KEYS = ("d", "n", "T", "separation", "noise", "seed")
SYNTH_DEFAULTS: Dict[str, Any] = {"separation": 1.0, "noise": 0.0, "seed": 0}
NA_VALUES = ["?", ""]


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _remap_labels(raw: Sequence[Any]) -> Tuple[np.ndarray, list]:
    """Map arbitrary label values to 1..n in sorted order of the originals."""
    levels = sorted(set(raw))
    index = {v: i + 1 for i, v in enumerate(levels)}
    return np.array([index[v] for v in raw], dtype=np.int64), levels


# --------------------------------------------------------------------------- #
# svmlight
# --------------------------------------------------------------------------- #
def _parse_label(token: str) -> Union[int, float]:
    value = float(token)
    return int(value) if value.is_integer() else value


def load_svmlight(path: Union[str, Path], n_features: Optional[int] = None) -> LabeledDataset:
    """Read ``label idx:val ...`` lines (1-based indices) into a dense dataset."""
    path = Path(path)
    labels_raw = []
    rows = []
    max_index = 0
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                labels_raw.append(_parse_label(tokens[0]))
            except ValueError:
                raise ParseError(f"bad label {tokens[0]!r}", line=lineno, path=str(path))
            entries = {}
            for token in tokens[1:]:
                idx, sep, val = token.partition(":")
                if not sep:
                    raise ParseError(f"expected idx:val, got {token!r}", line=lineno, path=str(path))
                try:
                    i = int(idx)
                    v = float(val)
                except ValueError:
                    raise ParseError(f"bad entry {token!r}", line=lineno, path=str(path))
                if i < 1:
                    raise ParseError(f"feature indices are 1-based, got {i}", line=lineno, path=str(path))
                if not np.isfinite(v):
                    raise ParseError(f"non-finite value in {token!r}", line=lineno, path=str(path))
                entries[i] = v
                max_index = max(max_index, i)
            rows.append(entries)

    if not rows:
        raise DomainError(f"{path}: no samples")
    p = n_features or max_index
    if p < max_index:
        raise DomainError(f"{path}: feature index {max_index} exceeds n_features={p}")
    if p == 0:
        raise DomainError(f"{path}: no features")
    X = np.zeros((len(rows), p))
    for r, entries in enumerate(rows):
        for i, v in entries.items():
            X[r, i - 1] = v
    labels, levels = _remap_labels(labels_raw)
    logger.debug(f"loaded {path.name}: T={X.shape[0]}, p={p}, classes={levels}")
    return LabeledDataset(
        features=X,
        labels=labels,
        n_classes=len(levels),
        name=path.stem,
        source_info={"format": "svmlight", "label_values": [str(v) for v in levels]},
    )


def write_svmlight(dataset: LabeledDataset, path: Union[str, Path]) -> Path:
    """Write a dataset in svmlight form; zeros are omitted, labels are 1..n."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for x, y in zip(dataset.features, dataset.labels):
            parts = [str(int(y))]
            parts += [f"{i + 1}:{format(float(v), '.17g')}" for i, v in enumerate(x) if v != 0.0]
            fh.write(" ".join(parts) + "\n")
    return path


# --------------------------------------------------------------------------- #
# CSV
# --------------------------------------------------------------------------- #
def load_csv(
    path: Union[str, Path],
    label_col: Union[int, str] = -1,
    categoricals: str = "error",
    one_hot_categoricals: Optional[bool] = None,
) -> LabeledDataset:
    """Read a CSV with a header row.

    Rows with a missing cell (empty or ``?``) are dropped and counted. Non-numeric
    columns are rejected (``error``), integer coded in sorted level order
    (``integer``) or one-hot encoded (``one_hot``).
    """
    if one_hot_categoricals is not None:
        categoricals = "one_hot" if one_hot_categoricals else "error"
    if categoricals not in CATEGORICALS:
        raise DomainError(f"categoricals must be one of {CATEGORICALS}, got {categoricals!r}")
    path = Path(path)
    try:
        frame = pd.read_csv(path, na_values=NA_VALUES, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DomainError(f"{path}: empty file")
    except pd.errors.ParserError as exc:
        raise ParseError(str(exc), path=str(path)) from exc

    if frame.shape[1] < 2:
        raise DomainError(f"{path}: need a label column and at least one feature column")
    if isinstance(label_col, str) and label_col not in frame.columns:
        try:
            label_col = int(label_col)
        except ValueError:
            raise DomainError(f"{path}: no column named {label_col!r}")
    if isinstance(label_col, int):
        if not -frame.shape[1] <= label_col < frame.shape[1]:
            raise DomainError(f"{path}: label column {label_col} out of range")
        label_name = frame.columns[label_col]
    else:
        label_name = label_col

    total = len(frame)
    frame = frame.dropna(axis=0, how="any")
    dropped = total - len(frame)
    if dropped:
        logger.warning(f"{path.name}: dropped {dropped} row(s) with missing cells")
    if frame.empty:
        raise DomainError(f"{path}: no complete rows")

    labels, levels = _remap_labels(frame[label_name].tolist())
    features = frame.drop(columns=[label_name])

    blocks = []
    for name in features.columns:
        col = features[name]
        numeric = pd.to_numeric(col, errors="coerce")
        if not numeric.isna().any():
            blocks.append(numeric.to_frame(name))
            continue
        if categoricals == "error":
            bad = col[numeric.isna()].index[0]
            # header is line 1; frame index counts data rows from 0
            raise ParseError(f"non-numeric value {col[bad]!r} in column {name!r}", line=int(bad) + 2, path=str(path))
        if categoricals == "integer":
            codes = pd.Categorical(col.astype(str), categories=sorted(col.astype(str).unique())).codes
            blocks.append(pd.DataFrame({name: codes.astype(np.float64)}, index=col.index))
        else:
            blocks.append(pd.get_dummies(col.astype(str), prefix=str(name), dtype=np.float64))

    X = pd.concat(blocks, axis=1).to_numpy(dtype=np.float64)
    return LabeledDataset(
        features=X,
        labels=labels,
        n_classes=len(levels),
        name=path.stem,
        source_info={
            "format": "csv",
            "dropped_rows": int(dropped),
            "label_values": [str(v) for v in levels],
            "categoricals": categoricals,
        },
    )


# --------------------------------------------------------------------------- #
# Synthetic problems
# --------------------------------------------------------------------------- #
def parse_synth_spec(spec: Union[str, Dict[str, Any]]) -> Dict[str, Any]:
    """Accept a mapping, JSON text, a JSON file path, or the relaxed ``{d:5,n:3}`` form."""
    if isinstance(spec, dict):
        raw = dict(spec)
    else:
        text = spec.strip()
        if text.startswith("synth:"):
            text = text[len("synth:"):].strip()
        candidate = Path(text)
        if not text.startswith("{") and candidate.is_file():
            text = candidate.read_text(encoding="utf-8")
        try:
            raw = json.loads(text)
        except json.JSONDecodeError:
            # YAML flow maps need a space after each colon
            try:
                raw = yaml.safe_load(re.sub(r":(?=\S)", ": ", text))
            except yaml.YAMLError as exc:
                raise ParseError(f"cannot parse synthetic spec {spec!r}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"synthetic spec must be a mapping, got {spec!r}")

    unknown = set(raw) - set(SYNTH_KEYS)
    if unknown:
        raise DomainError(f"unknown synthetic spec keys: {sorted(unknown)}")
    missing = [k for k in ("d", "n", "T") if k not in raw]
    if missing:
        raise DomainError(f"synthetic spec is missing {missing}")
    out = {**SYNTH_DEFAULTS, **raw}
    for key in ("d", "n", "T", "seed"):
        out[key] = int(out[key])
    for key in ("separation", "noise"):
        out[key] = float(out[key])
    return out


def synth_logreg(
    d: int,
    n: int,
    T: int,
    separation: float = 1.0,
    noise: float = 0.0,
    seed: int = 0,
) -> Tuple[LabeledDataset, np.ndarray]:
    """Gaussian inputs with labels drawn from a softmax model.

    ``theta_true`` is an (n * d,) block parameter with N(0, separation^2) entries.
    With probability ``noise`` a label is replaced by a uniformly random class.
    """
    if d < 1 or n < 1 or T < 1:
        raise DomainError(f"synthetic sizes must be positive, got d={d}, n={n}, T={T}")
    if not 0.0 <= noise <= 1.0:
        raise DomainError(f"noise must lie in [0, 1], got {noise}")
    if separation < 0:
        raise DomainError(f"separation must be >= 0, got {separation}")
    rng = _rng(seed)
    X = rng.standard_normal((T, d))
    W = rng.standard_normal((n, d)) * separation
    probs = softmax(X @ W.T, axis=1)
    u = rng.random(T)
    labels = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
    labels = np.minimum(labels, n - 1)
    flip = rng.random(T) < noise
    labels = np.where(flip, rng.integers(0, n, size=T), labels)
    dataset = LabeledDataset(
        features=X,
        labels=labels + 1,
        n_classes=n,
        name="synthetic",
        source_info={"format": "synth", "spec": {"d": d, "n": n, "T": T, "separation": separation,
                                                  "noise": noise, "seed": seed}},
    )
    return dataset, W.ravel()


# --------------------------------------------------------------------------- #
# Splitting and scaling
# --------------------------------------------------------------------------- #
@dataclass
class Scaler:
    """Preprocessing fitted on the training rows only."""
    kind: str
    mean: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "standardize":
            return (X - self.mean) / self.scale
        if self.kind == "unit_norm":
            norms = np.linalg.norm(X, axis=1, keepdims=True)
            return X / np.where(norms > 0, norms, 1.0)
        return X.copy()

    @classmethod
    def fit(cls, kind: str, X: np.ndarray) -> "Scaler":
        if kind not in SCALES:
            raise DomainError(f"scale must be one of {SCALES}, got {kind!r}")
        if kind != "standardize":
            return cls(kind)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        return cls(kind, mean=mean, scale=np.where(std > 0, std, 1.0))


def split_and_scale(
    dataset: LabeledDataset,
    test_frac: float,
    seed: int,
    scale: str = "none",
) -> Tuple[LabeledDataset, LabeledDataset, Scaler]:
    """Seeded shuffle split, then a scaler fitted on the train side applied to both."""
    if not 0.0 < test_frac < 1.0:
        raise DomainError(f"test_frac must lie in (0, 1), got {test_frac}")
    n_test = int(round(dataset.T * test_frac))
    if n_test < 1 or n_test > dataset.T - 1:
        raise DomainError(f"split of T={dataset.T} with test_frac={test_frac} leaves an empty side")
    order = _rng(seed).permutation(dataset.T)
    test_idx = np.sort(order[:n_test])
    train_idx = np.sort(order[n_test:])

    scaler = Scaler.fit(scale, dataset.features[train_idx])
    train = LabeledDataset(
        features=scaler.apply(dataset.features[train_idx]),
        labels=dataset.labels[train_idx],
        n_classes=dataset.n_classes,
        name=f"{dataset.name}-train",
        source_info=dict(dataset.source_info),
    )
    test = LabeledDataset(
        features=scaler.apply(dataset.features[test_idx]),
        labels=dataset.labels[test_idx],
        n_classes=dataset.n_classes,
        name=f"{dataset.name}-test",
        source_info=dict(dataset.source_info),
    )
    return train, test, scaler


def load_dataset(
    source: str,
    fmt: Optional[str] = None,
    label_col: Union[int, str] = -1,
    categoricals: str = "error",
) -> LabeledDataset:
    """Load from a path or a ``synth:{...}`` spec; the format defaults from the source."""
    if fmt is None:
        if source.startswith("synth:"):
            fmt = "synth"
        elif source.lower().endswith(".csv"):
            fmt = "csv"
        else:
            fmt = "svmlight"
    if fmt not in FORMATS:
        raise DomainError(f"format must be one of {FORMATS}, got {fmt!r}")
    if fmt == "synth":
        dataset, _ = synth_logreg(**parse_synth_spec(source))
        return dataset
    path = Path(source)
    if not path.is_file():
        raise DomainError(f"data file not found: {source}")
    if fmt == "csv":
        return load_csv(path, label_col=label_col, categoricals=categoricals)
    return load_svmlight(path)
