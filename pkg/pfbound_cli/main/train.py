"""Handler for the train command, plus the data preparation shared by all commands."""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

from rich.panel import Panel

from ..data_io import load_dataset, split_and_scale
from ..errors import DomainError
from ..logger import Logger
from ..majorizer.metrics import (
    build_manifest,
    local_timestamp,
    manifest_path_for,
    write_manifest,
    write_metrics_csv,
)
from ..majorizer.models import FeatureMap, LabeledDataset, TrainConfig
from ..majorizer.optimizers import train

logger = Logger(console_output=True)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGED = 2
EXIT_CHECK_FAILED = 3


@dataclass
class PreparedData:
    """Train/test split of a loaded source plus the feature map over it."""
    train: LabeledDataset
    test: LabeledDataset
    fmap: FeatureMap
    source: Dict[str, Any]


def prepare_data(
    data: str,
    fmt: Optional[str],
    test_frac: float,
    seed: int,
    scale: str,
    feature_map: str = "block_one_hot",
    label_col: Any = -1,
    categoricals: str = "error",
) -> PreparedData:
    """Load, split and scale a data source; the split uses its own seed."""
    dataset = load_dataset(data, fmt=fmt, label_col=label_col, categoricals=categoricals)
    train_set, test_set, _ = split_and_scale(dataset, test_frac=test_frac, seed=seed, scale=scale)
    fmap = FeatureMap.for_dataset(train_set, kind=feature_map)
    source = {
        "data": data,
        "format": fmt,
        "test_frac": test_frac,
        "split_seed": seed,
        "scale": scale,
        "feature_map": feature_map,
        "p": fmap.p,
        "n": fmap.n,
        "d": fmap.d,
    }
    logger.info(
        f"Data: {dataset.name} T={dataset.T} (train {train_set.T}, test {test_set.T}), "
        f"n={fmap.n}, p={fmap.p}, d={fmap.d}"
    )
    return PreparedData(train=train_set, test=test_set, fmap=fmap, source=source)


def point_log_at(out_dir: Path) -> None:
    """Send this command's log to <out_dir>/pfbound.log."""
    out_dir.mkdir(parents=True, exist_ok=True)
    Logger.set_log_file(str(out_dir / "pfbound.log"))


def run_train(
    config: TrainConfig,
    data_options: Dict[str, Any],
    out: Path,
    timed: bool = False,
) -> int:
    """Train one configuration and write the metrics CSV plus its manifest.

    Returns:
        Exit code: 0 on success, 2 on divergence
    """
    out = Path(out)
    point_log_at(out.parent)
    started = local_timestamp()
    prepared = prepare_data(**data_options)

    if config.method == "lspfb" and config.rank > prepared.fmap.d:
        raise DomainError(f"--rank {config.rank} exceeds the parameter dimension d={prepared.fmap.d}")

    logger.info(Panel.fit(
        "\n".join(f"{k}: {v}" for k, v in config.as_dict().items()),
        title=f"Training {config.method}",
    ))
    trace = train(config, prepared.train, prepared.test, prepared.fmap)

    write_metrics_csv(trace, out, timed=timed)
    manifest = build_manifest(
        config={**config.as_dict(), **prepared.source, "timed": timed},
        dataset=prepared.train,
        started_at=started,
        trace=trace,
    )
    write_manifest(manifest, manifest_path_for(out))

    final = trace.final
    if trace.diverged:
        logger.error(f"[red]✗ Diverged:[/red] {trace.diagnostic}")
        logger.info(f"Partial metrics written to {out}")
        return EXIT_DIVERGED

    logger.info(
        f"[green]✓[/green] {len(trace)} records; final train loss {final.train_loss:.6g}, "
        f"test loss {final.test_loss:.6g}, test accuracy {final.test_accuracy:.4f}"
    )
    logger.info(f"Metrics: {out}")
    return EXIT_OK

