"""Handler for the compare command."""

import csv
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from rich.table import Table

from ..config import Config
from ..errors import DomainError
from ..logger import Logger
from ..majorizer.metrics import epochs_to_threshold, mean_sd, write_metrics_csv
from ..majorizer.models import METHODS, MetricsTrace, RunJob, RunOutcome, TrainConfig
from ..majorizer.optimizers import solve_reference, train
from ..majorizer.run_manager import RunManager
from .train import EXIT_OK, PreparedData, point_log_at, prepare_data

logger = Logger(console_output=True)

SUMMARY_COLUMNS = (
    "method",
    "eta0",
    "seeds",
    "diverged",
    "reached",
    "epochs_to_threshold_mean",
    "epochs_to_threshold_sd",
    "final_train_loss_mean",
    "final_train_loss_sd",
    "final_test_loss_mean",
    "final_test_loss_sd",
    "final_test_acc_mean",
    "final_test_acc_sd",
)


@dataclass
class MethodSpec:
    """One compared method: ``name`` or ``name:key=value,...`` (keys eta0, rank, batch_size, schedule)."""
    label: str
    method: str
    eta0: Optional[float] = None
    rank: Optional[int] = None
    batch_size: Optional[int] = None
    schedule: Optional[str] = None


def parse_method_spec(text: str) -> MethodSpec:
    name, _, rest = text.strip().partition(":")
    if name not in METHODS:
        raise DomainError(f"unknown method {name!r} in {text!r}; expected one of {METHODS}")
    spec = MethodSpec(label=text.strip(), method=name)
    for item in filter(None, (part.strip() for part in rest.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise DomainError(f"expected key=value in method spec {text!r}, got {item!r}")
        try:
            if key == "eta0":
                spec.eta0 = float(value)
            elif key == "rank":
                spec.rank = int(value)
            elif key == "batch_size":
                spec.batch_size = int(value)
            elif key == "schedule":
                spec.schedule = value
            else:
                raise DomainError(f"unknown method spec key {key!r} in {text!r}")
        except ValueError as exc:
            raise DomainError(f"bad value for {key} in {text!r}: {exc}") from exc
    if spec.method == "lspfb" and spec.rank is None:
        raise DomainError(f"lspfb needs a rank, e.g. 'lspfb:rank=10' (got {text!r})")
    return spec


def recipe_method_specs(recipe: Dict[str, Any]) -> List[str]:
    """spfb, sgd and lspfb at every configured rank."""
    return ["spfb", "sgd"] + [f"lspfb:rank={k}" for k in recipe.get("ranks", [])]


def _safe_name(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", label)


def _final_loss(trace: MetricsTrace) -> float:
    if trace.diverged or trace.final is None:
        return math.inf
    return trace.final.train_loss


def tuning_seeds(eval_seeds: int, count: int) -> List[int]:
    """Seeds for eta0 tuning; they follow the evaluation seeds 0..eval_seeds-1 and never overlap them."""
    return list(range(eval_seeds, eval_seeds + max(1, count)))


def tune_eta0(
    base: TrainConfig,
    prepared: PreparedData,
    grid: Sequence[float],
    tune_seeds: Sequence[int],
) -> float:
    """Grid value with the lowest mean final train loss over ``tune_seeds``."""
    if not grid:
        raise DomainError("eta0 grid is empty; set grids.eta0 in pfbound.yaml or give eta0 in the method spec")
    best: Tuple[float, float] = (math.inf, grid[0])
    for eta0 in grid:
        losses = []
        for seed in tune_seeds:
            cfg = replace(base, eta0=eta0, seed=seed)
            losses.append(_final_loss(train(cfg, prepared.train, None, prepared.fmap)))
        score = sum(losses) / len(losses)
        logger.debug(f"tune {base.method} eta0={eta0:g}: mean final loss {score:.6g}")
        if score < best[0]:
            best = (score, eta0)
    if not math.isfinite(best[0]):
        logger.warning(f"every eta0 in the grid diverged for {base.method}; using {best[1]:g}")
    return best[1]


def summarize(
    outcomes: Dict[Tuple[str, int], RunOutcome],
    labels: Sequence[str],
    etas: Dict[str, float],
    threshold: float,
) -> List[Dict[str, Any]]:
    """One summary row per method label."""
    rows = []
    for label in labels:
        runs = [o for (lab, _), o in outcomes.items() if lab == label]
        ok = [o for o in runs if o.success and o.trace is not None and o.trace.final is not None]
        reached = [e for e in (epochs_to_threshold(o.trace, threshold) for o in ok) if e is not None]
        row: Dict[str, Any] = {
            "method": label,
            "eta0": etas[label],
            "seeds": len(runs),
            "diverged": len(runs) - len(ok),
            "reached": len(reached),
        }
        stats = {
            "epochs_to_threshold": reached,
            "final_train_loss": [o.trace.final.train_loss for o in ok],
            "final_test_loss": [o.trace.final.test_loss for o in ok],
            "final_test_acc": [o.trace.final.test_accuracy for o in ok],
        }
        for key, values in stats.items():
            summary = mean_sd(values) if values else {"mean": math.nan, "sd": math.nan}
            row[f"{key}_mean"] = summary["mean"]
            row[f"{key}_sd"] = summary["sd"]
        rows.append(row)
    return rows


def write_summary_csv(rows: List[Dict[str, Any]], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({
                k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()
            })
    return path


def _summary_table(rows: List[Dict[str, Any]], threshold: float, epsilon: float) -> Table:
    table = Table(title=f"Epochs to (1+{epsilon:g})·L* = {threshold:.10g}")
    table.add_column("Method", style="cyan")
    table.add_column("η₀", justify="right")
    table.add_column("Reached", justify="right")
    table.add_column("Epochs (mean ± sd)", justify="right")
    table.add_column("Final train loss", justify="right")
    table.add_column("Final test acc", justify="right")
    table.add_column("Diverged", justify="right")
    for row in rows:
        epochs = (
            f"{row['epochs_to_threshold_mean']:.3f} ± {row['epochs_to_threshold_sd']:.3f}"
            if row["reached"] else "[yellow]not reached[/yellow]"
        )
        table.add_row(
            row["method"],
            f"{row['eta0']:g}",
            f"{row['reached']}/{row['seeds']}",
            epochs,
            f"{row['final_train_loss_mean']:.6g} ± {row['final_train_loss_sd']:.2g}",
            f"{row['final_test_acc_mean']:.4f}",
            str(row["diverged"]) if not row["diverged"] else f"[red]{row['diverged']}[/red]",
        )
    return table


def run_compare(
    config: Config,
    method_specs: Sequence[str],
    data_options: Dict[str, Any],
    lam: float,
    batch_size: int,
    epochs: int,
    seeds: int,
    epsilon: float,
    schedule: str,
    out_dir: Path,
) -> int:
    """Tune, run every method over the seed set, and report epochs-to-threshold."""
    out_dir = Path(out_dir)
    point_log_at(out_dir)
    settings = config.get_compare_settings()
    specs = [parse_method_spec(s) for s in method_specs]
    if not specs:
        raise DomainError("no methods to compare")
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise DomainError(f"duplicate method specs: {labels}")
    if seeds < 1:
        raise DomainError(f"--seeds must be >= 1, got {seeds}")

    prepared = prepare_data(**data_options)
    reference = solve_reference(
        prepared.train,
        lam,
        prepared.fmap,
        tol=float(settings.get("reference_tol", 1e-10)),
        max_iter=int(settings.get("reference_max_iter", 20000)),
    )
    threshold = (1.0 + epsilon) * reference.loss
    logger.info(
        f"Reference: L* = {reference.loss:.12g} (|∇L| = {reference.grad_norm:.2e}, "
        f"{reference.iterations} full-data bound steps)"
    )

    grid = config.get_eta0_grid()
    tune_seeds = tuning_seeds(seeds, int(settings.get("tune_seeds", 2)))
    etas: Dict[str, float] = {}
    jobs: List[RunJob] = []
    for spec in specs:
        base = TrainConfig(
            method=spec.method,
            eta0=spec.eta0 if spec.eta0 is not None else 1.0,
            lam=lam,
            batch_size=spec.batch_size or batch_size,
            epochs=epochs,
            seed=0,
            schedule=spec.schedule or schedule,
            rank=spec.rank,
        )
        eta0 = spec.eta0 if spec.eta0 is not None else tune_eta0(base, prepared, grid, tune_seeds)
        etas[spec.label] = eta0
        logger.info(f"{spec.label}: eta0 = {eta0:g}{'' if spec.eta0 is not None else ' (tuned)'}")
        jobs.extend(RunJob(label=spec.label, config=replace(base, eta0=eta0, seed=seed)) for seed in range(seeds))

    manager = RunManager(
        run_fn=lambda job: train(job.config, prepared.train, prepared.test, prepared.fmap),
        max_workers=config.get_max_workers(),
    )
    outcomes = manager.run_all(jobs)

    runs_dir = out_dir / "runs"
    for (label, seed), outcome in outcomes.items():
        if outcome.trace is not None:
            write_metrics_csv(outcome.trace, runs_dir / f"{_safe_name(label)}_seed{seed}.csv")
        if not outcome.success:
            logger.warning(f"{label} seed={seed}: {outcome.status} ({outcome.error_message})")

    rows = summarize(outcomes, labels, etas, threshold)
    summary_path = write_summary_csv(rows, out_dir / "compare_summary.csv")
    logger.info(_summary_table(rows, threshold, epsilon))
    logger.info(f"Summary: {summary_path}")
    return EXIT_OK
