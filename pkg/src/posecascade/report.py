"""Delimited metric outputs and the figures rendered next to them.

Every report path writes a CSV and, unless disabled, a PNG figure with
the same base name: the fine-tuning loss history gets a loss curve and
the evaluation errors get a histogram.  Figures use the Agg backend so
output bytes are reproducible run to run.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

__all__ = [
    "write_history_csv",
    "write_errors_csv",
    "save_loss_curve",
    "save_error_histogram",
    "figure_path",
]


def figure_path(csv_path) -> Path:
    """PNG sibling of a CSV output path."""
    return Path(csv_path).with_suffix(".png")


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_history_csv(history, path) -> None:
    """Per-epoch loss table with columns epoch, mean_train_loss."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(["epoch", "mean_train_loss"])
        for i, loss in enumerate(history, start=1):
            w.writerow([i, f"{loss:.17g}"])


def write_errors_csv(errors, path) -> None:
    """Per-sample error table with columns sample_index, normalized_error."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(["sample_index", "normalized_error"])
        for i, err in enumerate(errors):
            w.writerow([i, f"{err:.17g}"])


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    return plt


def save_loss_curve(history, path) -> None:
    """Line plot of mean training loss per fine-tuning epoch."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    epochs = np.arange(1, len(history) + 1)
    ax.plot(epochs, history, marker="o", markersize=3, color="#1f6fb2")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.set_title("fine-tuning loss history")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_error_histogram(errors, path) -> None:
    """Histogram of per-sample normalized errors with the mean marked."""
    plt = _pyplot()
    errors = np.asarray(errors, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.hist(errors, bins=24, color="#1f6fb2", edgecolor="white")
    mean = float(errors.mean())
    ax.axvline(mean, color="#b2421f", linestyle="--", linewidth=1.2,
               label=f"mean {mean:.4f}")
    ax.set_xlabel("normalized error")
    ax.set_ylabel("samples")
    ax.set_title("evaluation error distribution")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
