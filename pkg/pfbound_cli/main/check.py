"""Handler for the check command."""

import time
from pathlib import Path
from typing import List, Optional

from rich.table import Table

from ..config import Config
from ..logger import Logger
from ..majorizer.checks import run_suites, write_repro
from .train import EXIT_CHECK_FAILED, EXIT_OK, point_log_at

logger = Logger(console_output=True)


def run_check(
    config: Config,
    suites: Optional[List[str]],
    trials: Optional[int],
    seed: Optional[int],
    inject_bug: bool,
    out_dir: Path,
) -> int:
    """Run the invariant suites; on failure save the first counterexample and return 3."""
    out_dir = Path(out_dir)
    point_log_at(out_dir)
    if inject_bug:
        logger.warning("[yellow]Bug injection on: beta has its sign flipped[/yellow]")

    started = time.perf_counter()
    results = run_suites(config.get_check_settings(), names=suites, trials=trials,
                         inject_bug=inject_bug, seed=seed)
    elapsed = time.perf_counter() - started

    table = Table(title=f"Check suites ({elapsed:.1f}s)")
    table.add_column("Suite", style="cyan")
    table.add_column("Result")
    table.add_column("Trials", justify="right")
    table.add_column("Comparisons", justify="right")
    table.add_column("Worst margin", justify="right")
    for r in results:
        table.add_row(
            r.name,
            "[green]pass[/green]" if r.passed else "[red]FAIL[/red]",
            str(r.trials),
            str(r.checks),
            f"{r.worst:.3e}",
        )
    logger.info(table)

    failed = [r for r in results if not r.passed]
    if not failed:
        logger.info("[green]✓ All suites passed[/green]")
        return EXIT_OK

    path = write_repro(failed[0], out_dir)
    for r in failed:
        logger.error(f"[red]✗ {r.name} failed[/red] (margin {r.counterexample['margin']:.3e})")
    logger.info(f"First counterexample written to {path}")
    return EXIT_CHECK_FAILED
