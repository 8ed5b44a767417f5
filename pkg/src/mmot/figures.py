"""Figure rendering for the CLI report path (headless matplotlib).

Every plot lands next to the delimited output it illustrates. Support
scatters are only drawn for two-marginal couplings on 1-d grids; other
shapes return None rather than guessing a projection.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "support_scatter",
    "sweep_summary_figure",
    "sweep_panels_figure",
    "block_approx_figure",
]

SUPPORT_THRESHOLD = 1e-6


def _support_points(space, mass, threshold):
    idx = np.argwhere(mass > threshold)
    if idx.size == 0:
        return None
    x = space.points[idx[:, 0]]
    y = space.points[idx[:, 1]]
    weights = mass[idx[:, 0], idx[:, 1]]
    return x, y, weights


def support_scatter(space, mass, path, title="", threshold=SUPPORT_THRESHOLD):
    """Scatter of coupling entries above a mass threshold (N = 2 only)."""
    if mass.ndim != 2 or space.points.ndim != 1:
        return None
    pts = _support_points(space, mass, threshold)
    fig, ax = plt.subplots(figsize=(5, 5))
    if pts is not None:
        x, y, w = pts
        sizes = 2 + 40 * w / w.max()
        ax.scatter(x, y, s=sizes, c="tab:blue", alpha=0.6, linewidths=0)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title)
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def sweep_summary_figure(rows, path):
    """Support size and duality gap against epsilon, log-log."""
    eps = [row["epsilon"] for row in rows]
    support = [row["support_size"] for row in rows]
    gaps = [max(row["gap"], 0.0) for row in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.loglog(eps, support, "o-")
    ax1.set_xlabel("epsilon")
    ax1.set_ylabel(f"entries above {SUPPORT_THRESHOLD:g}")
    ax1.set_title("support size")
    ax2.loglog(eps, [g if g > 0 else np.nan for g in gaps], "s-", color="tab:red")
    ax2.set_xlabel("epsilon")
    ax2.set_ylabel("primal - dual")
    ax2.set_title("duality gap")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def sweep_panels_figure(space, couplings, epsilons, path, threshold=SUPPORT_THRESHOLD):
    """One support panel per epsilon, left to right (N = 2 only)."""
    usable = [c.ndim == 2 for c in couplings]
    if not all(usable) or space.points.ndim != 1:
        return None
    k = len(couplings)
    fig, axes = plt.subplots(1, k, figsize=(3.2 * k, 3.4), squeeze=False)
    for ax, mass, eps in zip(axes[0], couplings, epsilons):
        pts = _support_points(space, mass, threshold)
        if pts is not None:
            x, y, w = pts
            ax.scatter(x, y, s=1 + 20 * w / w.max(), c="tab:blue", alpha=0.5, linewidths=0)
        ax.set_title(f"eps = {eps:g}")
        ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def block_approx_figure(space, approx_mass, original_mass, path, threshold=1e-12):
    """Side-by-side support of the input coupling and its approximation."""
    if approx_mass.ndim != 2 or space.points.ndim != 1:
        return None
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    for ax, mass, title in ((axes[0], original_mass, "input"), (axes[1], approx_mass, "approximation")):
        pts = _support_points(space, mass, threshold)
        if pts is not None:
            x, y, w = pts
            ax.scatter(x, y, s=1 + 20 * w / w.max(), c="tab:green", alpha=0.5, linewidths=0)
        ax.set_title(title)
        ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
