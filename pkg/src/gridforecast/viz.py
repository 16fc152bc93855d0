"""Static figures: trajectory overlays on scene crops and probability-grid panels."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib import colors as mcolors
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from PIL import Image

PAST_COLOR = "white"
GT_COLOR = "lime"
# K = 5 candidates, in order: light blue, dark blue, black, red, magenta.
PRED_COLORS = ("#8ecbff", "#0a2a9c", "black", "red", "magenta")
HEATMAP_CMAP = "viridis"  # perceptually uniform, high values yellow


def pred_color(k: int):
    if k < len(PRED_COLORS):
        return PRED_COLORS[k]
    return matplotlib.colormaps["tab20"](k % 20)


def _to_cells(xy, scale, n):
    """Agent-frame pixels -> continuous (col, row) image coordinates."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    c = n // 2
    return xy[:, 0] / scale + c, xy[:, 1] / scale + c


def figure_to_array(fig: Figure) -> np.ndarray:
    canvas = FigureCanvasAgg(fig)
    canvas.draw()
    return np.asarray(canvas.buffer_rgba())[..., :3].copy()


def render_overlay(sample, pred=None, gt=None, zoom: int = 1, dpi: int = 100) -> np.ndarray:
    """RGB image of the scene crop with past, ground truth and K predictions drawn.

    ``pred`` is a TrajectorySet (agent-frame cells) or ``None``; ``gt`` is an
    agent-frame pixel array, defaulting to the sample's own future. The image
    is ``zoom`` times the crop size.
    """
    scene = np.transpose(np.asarray(sample.scene_grid), (1, 2, 0))
    n = scene.shape[0]
    size = n * zoom
    fig = Figure(figsize=(size / dpi, size / dpi), dpi=dpi)
    ax = fig.add_axes([0, 0, 1, 1])
    ax.imshow(scene, extent=(0, n, n, 0), interpolation="nearest")
    ax.set_xlim(0, n)
    ax.set_ylim(n, 0)
    ax.axis("off")
    lw = max(0.6, 0.4 * zoom)
    ms = max(1.0, 0.8 * zoom)
    cols, rows = _to_cells(sample.past_xy, sample.scale, n)
    ax.plot(cols, rows, "-o", color=PAST_COLOR, lw=lw, ms=ms)
    gt = sample.future_xy if gt is None else gt
    cols, rows = _to_cells(gt, sample.scale, n)
    ax.plot(cols, rows, "-o", color=GT_COLOR, lw=lw, ms=ms)
    if pred is not None:
        trajs = getattr(pred, "trajectories", pred)
        for k, traj in enumerate(np.asarray(trajs)):
            c = n // 2
            ax.plot(traj[:, 0] + c, traj[:, 1] + c, "-o", color=pred_color(k), lw=lw, ms=ms)
    return figure_to_array(fig)


def render_heatmaps(probs, ncols: int = 6, panel_inches: float = 1.6, titles: bool = True) -> Figure:
    """One panel per future step, sharing a single colour scale."""
    probs = np.asarray(probs, dtype=np.float64)
    t_f = probs.shape[0]
    ncols = max(1, min(ncols, t_f))
    nrows = math.ceil(t_f / ncols)
    fig = Figure(figsize=(ncols * panel_inches, nrows * panel_inches + 0.4))
    vmin, vmax = float(probs.min()), float(probs.max())
    if vmax <= vmin:
        vmax = vmin + 1e-12
    norm = mcolors.Normalize(vmin=vmin, vmax=vmax)
    images = []
    for t in range(t_f):
        ax = fig.add_subplot(nrows, ncols, t + 1)
        images.append(ax.imshow(probs[t], cmap=HEATMAP_CMAP, norm=norm, interpolation="nearest"))
        ax.set_xticks([])
        ax.set_yticks([])
        if titles:
            ax.set_title(f"t+{t + 1}", fontsize=8)
    fig.colorbar(images[-1], ax=fig.axes, shrink=0.8, fraction=0.03)
    return fig


def plot_loss_curve(curve, title: str = "") -> Figure:
    fig = Figure(figsize=(5, 3.2))
    ax = fig.add_subplot(1, 1, 1)
    epochs = [r["epoch"] for r in curve]
    ax.plot(epochs, [r["train_loss"] for r in curve], label="train")
    val = [r["val_loss"] for r in curve]
    if not all(np.isnan(v) for v in val):
        ax.plot(epochs, val, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    return fig


def plot_cs_report(report: dict) -> Figure:
    keys = ["cs_pct_path", "cs_pct_terrain", "cs_pct_obstacle", "cs_pct_out_of_image"]
    names = ["path", "terrain", "obstacle", "out of image"]
    fig = Figure(figsize=(4.5, 3))
    ax = fig.add_subplot(1, 1, 1)
    vals = [report.get(k, float("nan")) for k in keys]
    ax.bar(names, vals, color=["0.8", "tab:green", "tab:red", "0.3"], edgecolor="black")
    ax.set_ylabel("% of predicted points")
    ax.set_ylim(0, 100)
    fig.tight_layout()
    return fig


def save_figure(fig: Figure, path, dpi: int = 150):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=dpi)
    return path


def save_image(array: np.ndarray, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)
    return path
