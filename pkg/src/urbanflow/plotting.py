"""Figure rendering for report outputs. Everything goes to files (Agg)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .raster import Direction

_ARROW = {  # inflow arrow (dx, dy) in axes fraction, arrow points with the wind
    Direction.N: (0.0, -0.12),
    Direction.S: (0.0, 0.12),
    Direction.E: (-0.12, 0.0),
    Direction.W: (0.12, 0.0),
}


def _inflow_arrow(ax, direction: Direction):
    dx, dy = _ARROW[direction]
    ax.annotate(
        "",
        xy=(0.5 + dx, 0.5 + dy),
        xytext=(0.5 - dx, 0.5 - dy),
        xycoords="axes fraction",
        arrowprops=dict(color="red", width=2.5, headwidth=9),
    )


def save_height_figure(heights: np.ndarray, path: str | Path, title: str = "building heights"):
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(heights, cmap="Greys", origin="upper")
    fig.colorbar(im, ax=ax, label="height (m)")
    ax.set_title(title)
    ax.set_xticks([]), ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_field_figure(
    magnitude: np.ndarray,
    path: str | Path,
    direction: Direction | None = None,
    mask: np.ndarray | None = None,
    title: str = "speed (m/s)",
):
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(magnitude, cmap="viridis", origin="upper")
    fig.colorbar(im, ax=ax, label="m/s")
    if mask is not None:
        ax.contour(mask.astype(float), levels=[0.5], colors="yellow", linewidths=1.0)
    if direction is not None:
        _inflow_arrow(ax, direction)
        title = f"{title} - wind from {direction.value}"
    ax.set_title(title)
    ax.set_xticks([]), ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_comfort_panel(results, heights: np.ndarray, path: str | Path):
    """2x2 panel of per-direction magnitude with the exceedance mask overlay."""
    fig, axes = plt.subplots(2, 2, figsize=(9, 8))
    vmax = max(float(r.magnitude.max()) for r in results) or 1.0
    for ax, res in zip(axes.ravel(), results):
        im = ax.imshow(res.magnitude, cmap="viridis", origin="upper", vmin=0, vmax=vmax)
        ax.contour(res.mask.astype(float), levels=[0.5], colors="yellow", linewidths=0.8)
        ax.contour((heights > 0).astype(float), levels=[0.5], colors="white", linewidths=0.5)
        _inflow_arrow(ax, res.direction)
        ax.set_title(
            f"from {res.direction.value}: {100 * res.comfort_fraction:.1f}% >= {res.threshold:g} m/s"
        )
        ax.set_xticks([]), ax.set_yticks([])
    fig.colorbar(im, ax=axes.ravel().tolist(), label="speed (m/s)", shrink=0.85)
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_size_study_figure(result, path: str | Path):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for comp, marker in (("u", "o"), ("v", "s")):
        means = [result.mean(comp, s) for s in result.sizes]
        stds = [result.std(comp, s) for s in result.sizes]
        ax.errorbar(result.sizes, means, yerr=stds, marker=marker, capsize=3,
                    label=f"{comp} (slope {result.slope[comp]:+.4f})")
    ax.set_xscale("log")
    ax.set_xlabel("training layouts")
    ax.set_ylabel("test MAE (m/s)")
    ax.set_title("error vs dataset size")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_density_study_figure(result, path: str | Path):
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [f"{s}-{m}" for s in result.sizes for m in ("random", "dense")]
    xs = np.arange(len(labels))
    width = 0.38
    for off, (comp, color) in enumerate((("u", "#4477aa"), ("v", "#ee6677"))):
        means = [result.mean(comp, s, m) for s in result.sizes for m in ("random", "dense")]
        stds = [result.std(comp, s, m) for s in result.sizes for m in ("random", "dense")]
        ax.bar(xs + (off - 0.5) * width, means, width, yerr=stds, capsize=3,
               label=comp, color=color)
    ax.set_xticks(xs, labels)
    ax.set_ylabel("test MAE (m/s)")
    ax.set_title("random vs densest training subsets")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_correlation_figure(result, path: str | Path):
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, comp in zip(axes, ("u", "v")):
        pts = result.points[comp]
        ax.scatter([p[1] for p in pts], [p[2] for p in pts], s=18, alpha=0.8)
        ax.set_xlabel("buildings in layout")
        ax.set_ylabel(f"{comp} MAE (m/s)")
        ax.set_title(f"{comp}: Spearman rho = {result.rho[comp]:+.3f}")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_histogram_figure(edges: np.ndarray, counts: np.ndarray, path: str | Path):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    if len(counts):
        ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="k", alpha=0.8)
    ax.set_xlabel("building height (m)")
    ax.set_ylabel("count")
    ax.set_title("height distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_history_figure(history, path: str | Path, component: str):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    epochs = np.arange(1, history.epochs + 1)
    ax.plot(epochs, history.train_loss, label="train loss (normalized)")
    ax.plot(epochs, history.val_mae, label="val MAE (m/s)")
    ax.set_xlabel("epoch")
    ax.set_yscale("log")
    ax.set_title(f"training history ({component})")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
