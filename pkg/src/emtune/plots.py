"""Figure rendering for the CLI report and projection paths.

Coordinates and metrics come from the metrics module; this file only turns
them into PNGs next to the delimited output. Uses the Agg backend so it
works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_projection", "render_cluster_report"]


def render_projection(coords, labels, path, title: str) -> None:
    """Scatter a set of 2-D points, one color per label."""
    coords = np.asarray(coords)
    labels = list(labels)
    fig, ax = plt.subplots(figsize=(6.4, 5.6))
    for label in sorted(set(labels)):
        idx = [i for i, l in enumerate(labels) if l == label]
        ax.scatter(coords[idx, 0], coords[idx, 1], s=14, alpha=0.75, label=str(label))
    ax.set_title(title)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_cluster_report(class_names, per_class_distance, mean_distance, db_index, path) -> None:
    """Bar chart of per-class invariant distance with the summary in the title."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    positions = np.arange(len(class_names))
    ax.bar(positions, per_class_distance, color="#4878cf")
    ax.axhline(mean_distance, color="#d65f5f", linestyle="--", linewidth=1.2, label="class mean")
    ax.set_xticks(positions)
    ax.set_xticklabels([str(c) for c in class_names], rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("invariant distance")
    ax.set_title(f"within-class scatter (Davies-Bouldin {db_index:.3f})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
