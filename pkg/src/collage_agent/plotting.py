"""Figures written next to the CLI's tabular output."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .persist import atomic_write_bytes  # noqa: E402


def _save(fig, path: Path) -> Path:
    buf = io.BytesIO()
    # fixed metadata keeps repeated mock runs byte-identical
    fig.savefig(buf, format="png", dpi=100, metadata={"Software": None})
    plt.close(fig)
    return atomic_write_bytes(path, buf.getvalue())


def plot_group_means(means: Sequence[dict], columns: Sequence[str], path: str | Path) -> Path | None:
    """Grouped bar chart of the 1-10 rubric columns per group; None if nothing to plot."""
    cols = [c for c in columns if c.split(".")[0] in ("aesthetics", "richness", "coherence")]
    if not means or not cols:
        return None
    fig, ax = plt.subplots(figsize=(max(6, len(cols) * 0.9), 4))
    width = 0.8 / len(means)
    for g, row in enumerate(means):
        xs = [i + g * width for i in range(len(cols))]
        ax.bar(xs, [row.get(c) or 0 for c in cols], width=width, label=row["group"])
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(cols))])
    ax.set_xticklabels([c.split(".", 1)[1] for c in cols], rotation=45, ha="right", fontsize=8)
    ax.set_ylim(0, 10)
    ax.set_ylabel("mean score")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, Path(path))


def plot_relation_matrices(r_ref, r_gen, labels: Sequence[str], path: str | Path, title: str = "") -> Path:
    """Side-by-side heatmaps of two relation matrices."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    for ax, matrix, name in zip(axes, (r_ref, r_gen), ("reference", "generated")):
        im = ax.imshow(matrix.to_list(), vmin=-1, vmax=1, cmap="viridis")
        ax.set_title(name)
        ax.set_xticks(range(len(labels)))
        ax.set_yticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
        ax.set_yticklabels(labels, fontsize=7)
    fig.colorbar(im, ax=list(axes), shrink=0.8)
    if title:
        fig.suptitle(title)
    return _save(fig, Path(path))
