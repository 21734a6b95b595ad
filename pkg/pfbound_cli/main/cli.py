#!/usr/bin/env python3
"""Main entry point for the pfbound CLI."""

import functools
import logging
import signal
import sys
from pathlib import Path

import click

from ..config import Config
from ..data_io import CATEGORICALS, FORMATS, SCALES
from ..errors import DomainError, PFBoundError
from ..logger import Logger
from ..majorizer.bound_lowrank import NORMALIZERS
from ..majorizer.checks import SUITES
from ..majorizer.models import CURVATURE_SOURCES, FEATURE_MAP_KINDS, METHODS, SCHEDULES, TrainConfig
from .check import run_check
from .compare import recipe_method_specs, run_compare
from .constants import run_constants
from .rate import run_rate
from .show_config import show_config as show_config_handler
from .train import EXIT_DIVERGED, EXIT_USAGE, run_train

logger = Logger(console_output=True)


def signal_handler(sig, frame):
    """Handle SIGINT (Ctrl+C) gracefully."""
    print("\n\nInterrupted; partial outputs are left in place.")
    sys.exit(130)


class PFBoundGroup(click.Group):
    """Click group that reports usage errors with exit code 1."""

    def make_context(self, info_name, args, parent=None, **extra):
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as e:
            e.exit_code = EXIT_USAGE
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = EXIT_USAGE
            raise


def _label_col(value):
    """Column index when numeric, column name otherwise."""
    if value is None:
        return None
    try:
        return int(value)
    except ValueError:
        return value


def data_options(func):
    """Options shared by every command that loads a dataset."""
    options = [
        click.option("--data", "data", help="Data file path or synth:{d:..,n:..,T:..} spec"),
        click.option("--format", "fmt", type=click.Choice(FORMATS), help="Input format (default: from the source)"),
        click.option("--test-frac", type=float, help="Held-out fraction for the test split"),
        click.option("--scale", type=click.Choice(SCALES), help="Feature scaling fitted on the train split"),
        click.option("--feature-map", type=click.Choice(FEATURE_MAP_KINDS), help="Joint feature map"),
        click.option("--label-col", help="CSV label column (index or name)"),
        click.option("--categoricals", type=click.Choice(CATEGORICALS), help="How to treat non-numeric CSV columns"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _collect_data_options(config: Config, seed: int, fallback=None, **flags):
    """Merge data flags over a recipe (if any) and the config data defaults."""
    fallback = fallback or {}
    defaults = config.get_data_defaults()
    training = config.get_training_defaults()

    def pick(flag, key, default=None):
        value = flags.get(flag)
        if value is not None:
            return value
        if key in fallback:
            return fallback[key]
        return defaults.get(key, default)

    data = pick("data", "data")
    if not data:
        raise click.UsageError("--data is required")
    label_col = _label_col(flags.get("label_col"))
    return {
        "data": str(data),
        "fmt": pick("fmt", "format"),
        "test_frac": float(pick("test_frac", "test_frac", 0.2)),
        "seed": seed,
        "scale": pick("scale", "scale", "unit_norm"),
        "feature_map": flags.get("feature_map") or fallback.get("feature_map") or training.get("feature_map", "block_one_hot"),
        "label_col": label_col if label_col is not None else fallback.get("label_col", -1),
        "categoricals": pick("categoricals", "categoricals", "error"),
    }


def handle_errors(func):
    """Map library exceptions onto the exit-code contract."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            code = func(*args, **kwargs)
        except DomainError as e:
            logger.error(f"[red]✗ {e}[/red]", exc_info=True)
            ctx.exit(EXIT_USAGE)
        except PFBoundError as e:
            logger.error(f"[red]✗ Numerical failure: {e}[/red]", exc_info=True)
            ctx.exit(EXIT_DIVERGED)
        ctx.exit(code or 0)

    return wrapper


@click.group(cls=PFBoundGroup)
@click.option("-d", "--debug", is_flag=True, help="Enable debug logging")
@click.option(
    "--config",
    "config_file",
    type=click.Path(dir_okay=False, path_type=str),
    help="Path to pfbound.yaml (default: ./pfbound.yaml)",
)
@click.pass_context
def main(ctx, debug, config_file):
    """pfbound - partition-function bounds and the optimizers built on them."""
    signal.signal(signal.SIGINT, signal_handler)

    if debug:
        logging.basicConfig(level=logging.DEBUG)
    else:
        logging.basicConfig(level=logging.INFO)

    ctx.obj = Config(config_file=config_file)


@main.command()
@click.option("--method", type=click.Choice(METHODS), help="Optimizer")
@data_options
@click.option("--eta0", type=float, help="Learning-rate scale η₀")
@click.option("--lambda", "lam", type=float, help="ℓ2 regularization λ")
@click.option("--rank", type=int, help="Low-rank bound size k (lspfb only)")
@click.option("--batch-size", type=int, help="Mini-batch size m")
@click.option("--epochs", type=int, help="Passes over the training split")
@click.option("--seed", type=int, help="Seed for the split and the sample order")
@click.option("--schedule", type=click.Choice(SCHEDULES), help="Learning-rate schedule")
@click.option("--eval-every", type=int, help="Evaluate every this many samples (default: batch size)")
@click.option("--normalizer", type=click.Choice(NORMALIZERS), default="sample", show_default=True,
              help="Low-rank normalizer variant")
@click.option("--curvature", type=click.Choice(CURVATURE_SOURCES), default="same", show_default=True,
              help="Curvature from the gradient batch or from an independent draw (spfb, lspfb)")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=Path("metrics.csv"),
              show_default=True, help="Metrics CSV path (manifest is written next to it)")
@click.option("--timed", is_flag=True, help="Write per-step wall times into the CSV")
@click.pass_obj
@handle_errors
def train(config, method, data, fmt, test_frac, scale, feature_map, label_col, categoricals,
          eta0, lam, rank, batch_size, epochs, seed, schedule, eval_every, normalizer, curvature, out, timed):
    """Train one configuration and write its metrics."""
    defaults = config.get_training_defaults()
    method = method or defaults.get("method", "spfb")
    if method == "lspfb" and rank is None and defaults.get("rank") is None:
        raise click.UsageError("--method lspfb requires --rank")
    seed = seed if seed is not None else int(defaults.get("seed", 0))

    run_config = TrainConfig(
        method=method,
        eta0=eta0 if eta0 is not None else float(defaults.get("eta0", 1.0)),
        lam=lam if lam is not None else float(defaults.get("lambda", 0.1)),
        batch_size=batch_size or int(defaults.get("batch_size", 1000)),
        epochs=epochs if epochs is not None else int(defaults.get("epochs", 1)),
        seed=seed,
        schedule=schedule or defaults.get("schedule", "inv_t"),
        rank=rank if rank is not None else defaults.get("rank"),
        eval_every=eval_every if eval_every is not None else defaults.get("eval_every"),
        normalizer=normalizer,
        curvature=curvature,
    )
    options = _collect_data_options(
        config, seed, data=data, fmt=fmt, test_frac=test_frac, scale=scale,
        feature_map=feature_map, label_col=label_col, categoricals=categoricals,
    )
    return run_train(run_config, options, out, timed=timed)


@main.command()
@click.option("--method", "methods", multiple=True,
              help="Method spec, e.g. spfb, sgd or lspfb:rank=10,eta0=0.1 (repeatable)")
@click.option("--recipe", help="Named recipe from pfbound.yaml")
@data_options
@click.option("--lambda", "lam", type=float, help="ℓ2 regularization λ")
@click.option("--batch-size", type=int, help="Mini-batch size m")
@click.option("--epochs", type=int, help="Passes over the training split")
@click.option("--seeds", type=int, help="Number of seeds per method")
@click.option("--epsilon", type=float, help="Threshold is (1+ε)·L*")
@click.option("--schedule", type=click.Choice(SCHEDULES), help="Learning-rate schedule")
@click.option("--split-seed", type=int, default=0, show_default=True, help="Seed for the train/test split")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=Path("compare_out"),
              show_default=True, help="Output directory")
@click.pass_obj
@handle_errors
def compare(config, methods, recipe, data, fmt, test_frac, scale, feature_map, label_col, categoricals,
            lam, batch_size, epochs, seeds, epsilon, schedule, split_seed, out):
    """Run several methods over a seed set and compare epochs-to-threshold."""
    training = config.get_training_defaults()
    settings = config.get_compare_settings()
    recipe_cfg = {}
    if recipe:
        recipe_cfg = config.get_recipe(recipe)
        if recipe_cfg is None:
            names = ", ".join(config.get_recipe_names())
            raise click.UsageError(f"unknown recipe {recipe!r} (available: {names})")
    specs = list(methods) or (recipe_method_specs(recipe_cfg) if recipe_cfg else [])
    if not specs:
        raise click.UsageError("give at least one --method or a --recipe")

    def setting(flag, key, section):
        if flag is not None:
            return flag
        return recipe_cfg.get(key, section.get(key))

    lambda_fallback = {"lambda": training.get("lambda")}
    if recipe:
        lambda_fallback["lambda"] = config.get_lambda_for(recipe, training.get("lambda"))

    options = _collect_data_options(
        config, split_seed, fallback=recipe_cfg, data=data, fmt=fmt, test_frac=test_frac, scale=scale,
        feature_map=feature_map, label_col=label_col, categoricals=categoricals,
    )
    return run_compare(
        config,
        specs,
        options,
        lam=float(setting(lam, "lambda", lambda_fallback)),
        batch_size=int(setting(batch_size, "batch_size", training)),
        epochs=int(setting(epochs, "epochs", training)),
        seeds=int(seeds if seeds is not None else settings.get("seeds", 10)),
        epsilon=float(epsilon if epsilon is not None else settings.get("epsilon", 0.01)),
        schedule=schedule or training.get("schedule", "inv_t"),
        out_dir=out,
    )


@main.command()
@click.option("--suite", "suites", multiple=True, type=click.Choice(SUITES), help="Suite to run (repeatable; default all)")
@click.option("--trials", type=int, help="Override the trial count of every suite")
@click.option("--seed", type=int, help="Base seed (default: check.seed)")
@click.option("--inject-bug", is_flag=True, hidden=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=Path("check_out"),
              show_default=True, help="Directory for the log and counterexample files")
@click.pass_obj
@handle_errors
def check(config, suites, trials, seed, inject_bug, out):
    """Run the bound and solver invariant suites."""
    return run_check(config, list(suites) or None, trials, seed, inject_bug, out)


@main.command()
@data_options
@click.option("--lambda", "lam", type=float, help="ℓ2 regularization λ (must be > 0)")
@click.option("--eta0", type=float, help="η₀ at which to evaluate Q(η₀)")
@click.option("--batch-size", type=int, default=1, show_default=True, help="Batch size of the σ² estimation pass")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for the split and the σ² pass")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), help="Optional directory for constants.json")
@click.pass_obj
@handle_errors
def constants(config, data, fmt, test_frac, scale, feature_map, label_col, categoricals,
              lam, eta0, batch_size, seed, out):
    """Report the rate constants for a dataset."""
    if lam is None:
        lam = float(config.get_training_defaults().get("lambda", 0.1))
    options = _collect_data_options(
        config, seed, data=data, fmt=fmt, test_frac=test_frac, scale=scale,
        feature_map=feature_map, label_col=label_col, categoricals=categoricals,
    )
    return run_constants(config, options, lam=lam, eta0=eta0, batch_size=batch_size, seed=seed, out_dir=out)


@main.command()
@data_options
@click.option("--lambda", "lam", type=float, help="ℓ2 regularization λ")
@click.option("--eta0", type=float, help="η₀ (default: rate.eta0_factor × minimum η₀)")
@click.option("--batch-size", "batch_sizes", type=int, multiple=True, help="Batch size (repeatable)")
@click.option("--seeds", type=int, help="Number of seeds")
@click.option("--t-min", type=int, help="First step of the regression window")
@click.option("--t-max", type=int, help="Last step of the regression window")
@click.option("--points", type=int, help="Log-spaced evaluation points")
@click.option("--curvature", "curvatures", type=click.Choice(CURVATURE_SOURCES), multiple=True,
              help="Curvature source of the SPFB steps (repeatable; default: rate.curvatures)")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for the split")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=Path("rate_out"),
              show_default=True, help="Output directory")
@click.pass_obj
@handle_errors
def rate(config, data, fmt, test_frac, scale, feature_map, label_col, categoricals,
         lam, eta0, batch_sizes, seeds, t_min, t_max, points, curvatures, seed, out):
    """Measure the empirical convergence rate of SPFB with η_t = η₀/t."""
    settings = config.get_rate_settings()
    compare_settings = config.get_compare_settings()
    options = _collect_data_options(
        config, seed, fallback={"data": settings.get("data")}, data=data, fmt=fmt, test_frac=test_frac,
        scale=scale, feature_map=feature_map, label_col=label_col, categoricals=categoricals,
    )
    return run_rate(
        settings,
        options,
        lam=lam if lam is not None else float(settings.get("lambda", 0.1)),
        eta0=eta0,
        batch_sizes=list(batch_sizes) or [int(m) for m in settings.get("batch_sizes", [1, 1000])],
        seeds=seeds if seeds is not None else int(settings.get("seeds", 10)),
        t_min=t_min if t_min is not None else int(settings.get("t_min", 100)),
        t_max=t_max if t_max is not None else int(settings.get("t_max", 10000)),
        points=points if points is not None else int(settings.get("points", 25)),
        reference_tol=float(compare_settings.get("reference_tol", 1e-10)),
        reference_max_iter=int(compare_settings.get("reference_max_iter", 20000)),
        out_dir=out,
        curvatures=list(curvatures) or [str(c) for c in settings.get("curvatures", ["same"])],
    )


@main.command("show-config")
@click.pass_obj
def show_config(config):
    """Show current configuration."""
    show_config_handler(config)


if __name__ == "__main__":
    main()
