"""Render analysis and sweep reports to figure files.

Presentation layer only: the computation modules stay figure-free, and the
CLI calls in here when a ``--plot`` path is given.  Uses the Agg backend so
rendering works headless.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .analysis import SimilarityMatrix, SparsityReport  # noqa: E402
from .sweep import SweepReport  # noqa: E402

__all__ = ["plot_sweep", "plot_similarity", "plot_sparsity"]

_DPI = 150


def plot_sweep(report: SweepReport, path) -> Path:
    """Score-versus-lambda curve with the selected point highlighted."""
    lams = [e.lam for e in report.entries if math.isfinite(e.score)]
    scores = [e.score for e in report.entries if math.isfinite(e.score)]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(lams, scores, marker="o", linewidth=1.2, markersize=4)
    ax.scatter(
        [report.best_lambda], [report.best_score],
        color="crimson", zorder=3, label=f"best λ = {report.best_lambda:g}",
    )
    failed = [e.lam for e in report.entries if not math.isfinite(e.score)]
    for lam in failed:
        ax.axvline(lam, color="gray", linestyle=":", linewidth=0.8)
    ax.set_xlabel("λ")
    ax.set_ylabel("validation score")
    ax.set_title(f"λ sweep ({report.config.mode} mode)")
    ax.legend(loc="best")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def plot_similarity(matrix: SimilarityMatrix, path) -> Path:
    """Heatmap of the pairwise cosine matrix, annotated per cell."""
    n = len(matrix.labels)
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * n, 0.8 + 0.6 * n))
    im = ax.imshow(matrix.values, vmin=-1.0, vmax=1.0, cmap="RdBu_r")
    ax.set_xticks(range(n), labels=matrix.labels, rotation=45, ha="right")
    ax.set_yticks(range(n), labels=matrix.labels)
    for i in range(n):
        for j in range(n):
            ax.text(
                j, i, f"{matrix.values[i, j]:.2f}",
                ha="center", va="center", fontsize=7,
            )
    fig.colorbar(im, ax=ax, shrink=0.8, label="cosine similarity")
    ax.set_title("pairwise delta cosine similarity")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def plot_sparsity(report: SparsityReport, path, log_scale: bool = True) -> Path:
    """Bar chart of the value histogram (log counts by default)."""
    lowers = [lo for lo, _, _ in report.histogram]
    widths = [hi - lo for lo, hi, _ in report.histogram]
    counts = [c for _, _, c in report.histogram]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(lowers, counts, width=widths, align="edge", edgecolor="none")
    if log_scale and any(counts):
        ax.set_yscale("log")
    ax.set_xlabel("delta value")
    ax.set_ylabel("count")
    ax.set_title(f"value distribution: {report.label} "
                 f"({report.total_elements} elements)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)
