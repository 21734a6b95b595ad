"""Handler for the constants command."""

import json
import math
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from rich.table import Table

from ..config import Config
from ..errors import DomainError
from ..logger import Logger
from ..majorizer.bound_full import build_bounds_batch
from ..majorizer.linear_model import regularized_loss
from ..majorizer.metrics import local_timestamp
from ..majorizer.models import TrainConfig
from ..majorizer.optimizers import solve_reference, theory_constants, train
from .train import EXIT_OK, point_log_at, prepare_data

logger = Logger(console_output=True)

SPECTRUM_SAMPLES = 200


def _spectrum_at_zero(prepared, lam: float) -> Dict[str, float]:
    """Range of 1/lambda_max(Sigma_j + lam I) over single-sample bounds at theta = 0."""
    X = prepared.train.features[:SPECTRUM_SAMPLES]
    values = []
    for x in X:
        bounds = build_bounds_batch(np.zeros(prepared.fmap.d), x[None, :], prepared.fmap)
        top = float(np.linalg.eigvalsh(bounds.sigma_sum)[-1]) + lam
        values.append(1.0 / top)
    return {"min": min(values), "max": max(values), "samples": len(values)}


def run_constants(
    config: Config,
    data_options: Dict[str, Any],
    lam: float,
    eta0: Optional[float],
    batch_size: int,
    seed: int,
    out_dir: Optional[Path],
) -> int:
    """Print the rate constants for a dataset; returns 0 (preconditions raise DomainError)."""
    if out_dir is not None:
        point_log_at(Path(out_dir))
    if not lam > 0:
        raise DomainError(f"--lambda must be > 0 for the rate constants (got {lam})")

    prepared = prepare_data(**data_options)
    if prepared.fmap.n < 2:
        raise DomainError(f"the rate constants need n >= 2 classes, got n={prepared.fmap.n}")

    sigma_run = TrainConfig(method="spfb", eta0=eta0 or 1.0, lam=lam, batch_size=batch_size, epochs=1, seed=seed)
    sigma_sq = train(sigma_run, prepared.train, None, prepared.fmap).sigma_sq

    settings = config.get_compare_settings()
    reference = solve_reference(
        prepared.train,
        lam,
        prepared.fmap,
        tol=float(settings.get("reference_tol", 1e-10)),
        max_iter=int(settings.get("reference_max_iter", 20000)),
    )
    initial_gap = regularized_loss(np.zeros(prepared.fmap.d), prepared.train, lam, prepared.fmap) - reference.loss

    consts = theory_constants(
        prepared.train, lam, prepared.fmap, sigma_sq=sigma_sq, eta0=eta0, initial_gap=initial_gap
    )
    spectrum = _spectrum_at_zero(prepared, lam)

    table = Table(title="Rate constants for η_t = η₀/t")
    table.add_column("Quantity", style="cyan")
    table.add_column("Value", justify="right")
    rows = [
        ("p (raw inputs)", f"{prepared.fmap.p}"),
        ("d (parameters, n·p)" if prepared.fmap.kind == "block_one_hot" else "d (parameters)", f"{prepared.fmap.d}"),
        ("n (classes)", f"{prepared.fmap.n}"),
        ("max ‖x‖²", f"{consts.max_x_sq:.12g}"),
        ("μ₁", f"{consts.mu1:.6g}"),
        ("μ₂", f"{consts.mu2:.6g}"),
        ("λ₁", f"{consts.lambda1:.6g}"),
        ("λ₂ bound", f"{consts.lambda2:.6g}"),
        ("σ² (first-epoch max ‖∇f‖²)", f"{consts.sigma_sq:.6g}"),
        ("minimum η₀", f"{consts.eta0_min:.6g}"),
        ("L(θ¹) − L*", f"{initial_gap:.6g}"),
        ("empirical 1/λmax(Σ+λI) at θ=0", f"[{spectrum['min']:.6g}, {spectrum['max']:.6g}]"),
    ]
    if eta0 is not None:
        q = "∞ (η₀ at or below threshold)" if math.isinf(consts.Q) else f"{consts.Q:.6g}"
        rows.append((f"Q(η₀ = {eta0:g})", q))
    for name, value in rows:
        table.add_row(name, value)
    logger.info(table)

    inside = consts.mu1 <= spectrum["min"] and spectrum["max"] <= consts.mu2
    if inside:
        logger.info("[green]✓[/green] empirical spectrum lies within [μ₁, μ₂]")
    else:
        logger.warning("[yellow]empirical spectrum leaves [μ₁, μ₂][/yellow]")

    if out_dir is not None:
        report = {
            "generated_at": local_timestamp(),
            "data": prepared.source,
            "lambda": lam,
            "eta0": eta0,
            "mu1": consts.mu1,
            "mu2": consts.mu2,
            "lambda1": consts.lambda1,
            "lambda2": consts.lambda2,
            "sigma_sq": consts.sigma_sq,
            "max_x_sq": consts.max_x_sq,
            "eta0_min": consts.eta0_min,
            "Q": None if math.isnan(consts.Q) else (str(consts.Q) if math.isinf(consts.Q) else consts.Q),
            "initial_gap": initial_gap,
            "spectrum_at_zero": spectrum,
        }
        path = Path(out_dir) / "constants.json"
        path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"Report: {path}")
    return EXIT_OK
