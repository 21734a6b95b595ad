"""
Metrics files: the tidy per-run CSV, its JSON manifest and the comparison statistics.

The CSV header is fixed; plot scripts read columns by name only. Floats are written
with 17 significant digits, so a rerun with the same flags and seed reproduces the
file byte for byte. Wall-clock step times go to the manifest unless ``timed`` is set.
"""
import csv
import json
import math
from dataclasses import asdict
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from tzlocal import get_localzone

from .. import __version__
from ..errors import DomainError, ParseError
from .models import LabeledDataset, MetricsTrace, RunManifest

METRICS_COLUMNS = ("step", "epoch", "train_loss", "test_loss", "test_acc", "lr", "step_ms")
METRICS_SCHEMA = "pfbound.metrics/1"


def local_timestamp() -> str:
    return datetime.now(get_localzone()).isoformat(timespec="seconds")


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_metrics_csv(trace: MetricsTrace, path: Path, timed: bool = False) -> Path:
    """Write one row per record; ``step_ms`` stays empty unless ``timed``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for r in trace.records:
            writer.writerow([
                str(r.step),
                _fmt(r.epoch),
                _fmt(r.train_loss),
                _fmt(r.test_loss),
                _fmt(r.test_accuracy),
                _fmt(r.lr),
                _fmt(r.step_wall_time * 1000.0) if timed else "",
            ])
    return path


def read_metrics_csv(path: Path) -> List[Dict[str, Optional[float]]]:
    """Rows of a metrics CSV as dicts of floats (None for empty cells)."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_COLUMNS:
            raise ParseError(f"unexpected metrics header {reader.fieldnames}", line=1, path=str(path))
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append({k: (float(v) if v != "" else None) for k, v in row.items()})
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, path=str(path)) from exc
    return rows


def build_manifest(
    config: Dict[str, Any],
    dataset: LabeledDataset,
    started_at: str,
    trace: Optional[MetricsTrace] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> RunManifest:
    manifest = RunManifest(
        config=dict(config),
        dataset_fingerprint=dataset.fingerprint(),
        code_version=__version__,
        started_at=started_at,
        finished_at=local_timestamp(),
        schema=METRICS_SCHEMA,
        columns=METRICS_COLUMNS,
        extra=dict(extra or {}),
    )
    manifest.extra.setdefault("dataset", {
        "name": dataset.name,
        "T": dataset.T,
        "p": dataset.p,
        "n": dataset.n_classes,
        **dataset.source_info,
    })
    if trace is not None:
        manifest.extra["step_ms"] = [r.step_wall_time * 1000.0 for r in trace.records]
        manifest.extra["sigma_sq_first_epoch"] = trace.sigma_sq
        manifest.extra["diverged"] = trace.diverged
        if trace.diagnostic:
            manifest.extra["diagnostic"] = trace.diagnostic
    return manifest


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_manifest(manifest: RunManifest, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(asdict(manifest)), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def manifest_path_for(metrics_path: Path) -> Path:
    metrics_path = Path(metrics_path)
    return metrics_path.with_name(metrics_path.stem + ".manifest.json")


def epochs_to_threshold(trace: MetricsTrace, threshold: float) -> Optional[float]:
    """Epoch of the first record with train loss <= threshold, or None."""
    for r in trace.records:
        if r.train_loss <= threshold:
            return r.epoch
    return None


def mean_sd(values: Sequence[float]) -> Dict[str, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    if not values:
        raise DomainError("no values to summarize")
    arr = np.asarray(values, dtype=np.float64)
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "sd": sd, "count": int(arr.size)}
