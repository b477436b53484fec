"""Matplotlib figures for the report command; everything renders off-screen to files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_losses(log, path, columns: Sequence[str] = ("L_D", "L_G", "L_G_creativity", "L_rec")) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    it = log.column("iteration")
    for c in columns:
        y = log.column(c)
        if np.any(y != 0):
            ax.plot(it, y, label=c, linewidth=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss (batch sum)")
    ax.set_yscale("symlog")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title("Training losses")
    fig.tight_layout()
    return _save(fig, path)


def plot_histograms(summary: dict, shape_names, texture_names, path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, key, names, title in (
        (axes[0], "shape_histogram", shape_names, "Predicted shape"),
        (axes[1], "texture_histogram", texture_names, "Predicted texture"),
    ):
        counts = summary[key]
        ax.bar(range(len(counts)), counts, color="tab:blue")
        ax.set_xticks(range(len(counts)))
        ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_correlations(result, path, title: str = "Pearson correlation") -> Path:
    mat = np.asarray(result.matrix, dtype=float)
    fig, ax = plt.subplots(figsize=(1.1 * len(result.col_names) + 2.5, 0.5 * len(result.row_names) + 1.8))
    im = ax.imshow(mat, cmap="coolwarm", vmin=-1, vmax=1)
    ax.set_xticks(range(len(result.col_names)))
    ax.set_xticklabels(result.col_names, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(result.row_names)))
    ax.set_yticklabels(result.row_names, fontsize=8)
    for (i, j), v in np.ndenumerate(mat):
        if np.isfinite(v):
            ax.text(j, i, f"{v:.2f}", ha="center", va="center", fontsize=7)
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_pca(projections: np.ndarray, colour: np.ndarray, path, explained=None) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    sc = ax.scatter(projections[:, 0], projections[:, 1], c=colour, cmap="viridis", s=12)
    fig.colorbar(sc, ax=ax, label="overall rating")
    if explained is not None:
        ax.set_xlabel(f"PC1 ({100 * explained[0]:.1f}%)")
        ax.set_ylabel(f"PC2 ({100 * explained[1]:.1f}%)")
    ax.set_title("PCA of per-image metrics")
    fig.tight_layout()
    return _save(fig, path)


def plot_wundt(points: list, path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    x = [p[1] for p in points]
    y = [p[2] for p in points]
    ax.plot(x, y, "o-", color="tab:red")
    for name, nx, ny in points:
        ax.annotate(name, (nx, ny), textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlabel("novelty (mean NN distance)")
    ax.set_ylabel("mean overall rating")
    ax.set_title("Novelty vs liking")
    fig.tight_layout()
    return _save(fig, path)
