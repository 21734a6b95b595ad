#!/usr/bin/env python3
"""Render train loss, test loss and test accuracy curves from pfbound metrics CSVs.

Usage:
    python -m pfbound_cli.scripts.plot_curves runs/*.csv --out curves.png

Each CSV becomes one line per panel, labelled by its file stem. Only the
header names of the metrics schema are relied on.
"""

from pathlib import Path
from typing import Optional, Sequence

import click
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

PANELS = (
    ("train_loss", "train loss (regularized)", True),
    ("test_loss", "test loss", True),
    ("test_acc", "test accuracy", False),
)
REQUIRED = {"epoch", "train_loss", "test_loss", "test_acc"}


def load_curves(paths: Sequence[Path]) -> pd.DataFrame:
    """Stack metrics files into one frame with a ``run`` column."""
    frames = []
    for path in paths:
        frame = pd.read_csv(path)
        missing = REQUIRED - set(frame.columns)
        if missing:
            raise click.BadParameter(f"{path} is missing columns {sorted(missing)}")
        frames.append(frame.assign(run=Path(path).stem))
    if not frames:
        raise click.BadParameter("no metrics files given")
    return pd.concat(frames, ignore_index=True)


def render_curves(curves: pd.DataFrame, out: Path, threshold: Optional[float] = None, title: Optional[str] = None) -> Path:
    fig, axes = plt.subplots(1, len(PANELS), figsize=(4.2 * len(PANELS), 3.6))
    for ax, (column, label, log_scale) in zip(axes, PANELS):
        for run, group in curves.groupby("run", sort=True):
            ax.plot(group["epoch"], group[column], label=run, linewidth=1.2)
        if log_scale and (curves[column] > 0).all():
            ax.set_yscale("log")
        if threshold is not None and column == "train_loss":
            ax.axhline(threshold, color="0.4", linestyle="--", linewidth=0.8)
        ax.set_xlabel("epoch")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    axes[-1].legend(fontsize=7, loc="lower right")
    if title:
        fig.suptitle(title)
    plt.tight_layout()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


@click.command()
@click.argument("metrics", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=Path("curves.png"), show_default=True)
@click.option("--threshold", type=float, help="Draw the (1+ε)·L* line on the train-loss panel")
@click.option("--title", help="Figure title")
def main(metrics, out, threshold, title):
    """Plot learning curves from one or more metrics CSV files."""
    path = render_curves(load_curves(metrics), out, threshold=threshold, title=title)
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
