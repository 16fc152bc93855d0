"""Displacement errors, Correspondence-to-Scene, obstacle-avoidance rate."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import LengthMismatchError, PaletteError

PATH, TERRAIN, OBSTACLE = 0, 1, 2
OUT = 3  # accumulator slot only, never a label value
CLASS_NAMES = ("path", "terrain", "obstacle")

# Annotation palette for label rasters: path white, terrain green, obstacle red.
LABEL_PALETTE = {
    PATH: (255, 255, 255),
    TERRAIN: (0, 255, 0),
    OBSTACLE: (255, 0, 0),
}


def _as_set(pred) -> np.ndarray:
    p = np.asarray(pred, dtype=np.float64)
    if p.ndim == 2:
        p = p[None]
    if p.ndim != 3 or p.shape[-1] != 2:
        raise LengthMismatchError(f"expected (K, T, 2) predictions, got shape {p.shape}")
    return p


def _check(gt, pred):
    gt = np.asarray(gt, dtype=np.float64)
    pred = _as_set(pred)
    if gt.ndim != 2 or gt.shape[-1] != 2 or pred.shape[1] != gt.shape[0]:
        raise LengthMismatchError(
            f"ground truth {gt.shape} and predictions {pred.shape} disagree on length"
        )
    if pred.shape[0] == 0:
        raise LengthMismatchError("empty prediction set")
    return gt, pred


def displacement(gt, pred) -> np.ndarray:
    """Per-trajectory, per-step Euclidean errors, shape (K, T)."""
    gt, pred = _check(gt, pred)
    return np.linalg.norm(pred - gt[None], axis=-1)


def made(gt, pred) -> float:
    """Minimum over the K candidates of the mean displacement error."""
    return float(displacement(gt, pred).mean(axis=1).min())


def mfde(gt, pred) -> float:
    """Minimum over the K candidates of the final-step displacement error."""
    return float(displacement(gt, pred)[:, -1].min())


def best_of_k(gt, pred) -> int:
    return int(displacement(gt, pred).mean(axis=1).argmin())


@dataclass
class CSReport:
    pct_path: float
    pct_terrain: float
    pct_obstacle: float
    pct_out_of_image: float
    total_points: int

    def as_dict(self):
        return asdict(self)


@dataclass
class CSAccumulator:
    """Point counts per category; merging is associative and commutative."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "CSAccumulator") -> "CSAccumulator":
        return CSAccumulator(self.counts + other.counts)

    def report(self) -> CSReport:
        total = self.total
        pct = self.counts / total * 100.0 if total else np.zeros(4)
        return CSReport(*(float(v) for v in pct), total_points=total)


def point_categories(points, labels: np.ndarray) -> np.ndarray:
    """Category of each point: label value at the floored pixel, or ``OUT``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    h, w = labels.shape
    finite = np.isfinite(pts).all(axis=1)
    safe = np.where(finite[:, None], pts, -1.0)
    cols = np.floor(safe[:, 0]).astype(np.int64)
    rows = np.floor(safe[:, 1]).astype(np.int64)
    inside = finite & (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
    cats = np.full(len(pts), OUT, dtype=np.int64)
    cats[inside] = labels[rows[inside], cols[inside]]
    return cats


def cs_accumulate(pred, labels: np.ndarray, acc: CSAccumulator | None = None) -> CSAccumulator:
    """Add every predicted world-pixel point of ``pred`` (K, T, 2) to ``acc``."""
    cats = point_categories(pred, labels)
    counts = np.bincount(cats, minlength=4)[:4]
    acc = acc or CSAccumulator()
    return acc.merge(CSAccumulator(counts.astype(np.int64)))


def obstacle_free_rate(predictions, labels) -> float:
    """Percentage of sequences whose predicted points never touch an obstacle.

    ``predictions`` is a sequence of (K, T, 2) world-pixel arrays; ``labels``
    is one label map shared by all of them or a sequence with one per item.
    """
    predictions = list(predictions)
    if not predictions:
        return float("nan")
    per_seq = isinstance(labels, (list, tuple))
    free = 0
    for i, pred in enumerate(predictions):
        lab = labels[i] if per_seq else labels
        if not np.any(point_categories(pred, lab) == OBSTACLE):
            free += 1
    return free / len(predictions) * 100.0


def import_label_map(raster, palette: dict | None = None, max_nonexact: float = 0.05) -> np.ndarray:
    """Convert an RGB label raster (or a pre-indexed one) into class codes.

    Single-channel rasters are taken as already indexed with codes 0/1/2.
    RGB pixels not exactly on the palette are snapped to the nearest palette
    colour; more than ``max_nonexact`` of such pixels is a ``PaletteError``.
    """
    arr = np.asarray(raster)
    if arr.ndim == 2:
        if arr.size and (arr.min() < 0 or arr.max() > OBSTACLE):
            raise PaletteError("indexed label map contains codes outside {0, 1, 2}")
        return arr.astype(np.uint8)
    palette = palette or LABEL_PALETTE
    codes = np.array(sorted(palette), dtype=np.uint8)
    colors = np.array([palette[c] for c in codes], dtype=np.int64)
    rgb = arr[..., :3].astype(np.int64).reshape(-1, 3)
    d2 = ((rgb[:, None, :] - colors[None, :, :]) ** 2).sum(axis=-1)
    nearest = d2.argmin(axis=1)
    nonexact = float((d2.min(axis=1) > 0).mean()) if len(rgb) else 0.0
    if nonexact > max_nonexact:
        raise PaletteError(
            f"{nonexact:.1%} of pixels are off-palette (limit {max_nonexact:.0%}); wrong file?"
        )
    return codes[nearest].reshape(arr.shape[:2])


def load_label_map(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode in ("L", "P", "I"):
        return import_label_map(np.asarray(img if img.mode != "P" else img.convert("L")))
    return import_label_map(np.asarray(img.convert("RGB")))


def label_map_to_rgb(labels: np.ndarray, palette: dict | None = None) -> np.ndarray:
    palette = palette or LABEL_PALETTE
    lut = np.zeros((max(palette) + 1, 3), dtype=np.uint8)
    for code, color in palette.items():
        lut[code] = color
    return lut[labels]


def save_label_map(path, labels: np.ndarray):
    Image.fromarray(label_map_to_rgb(labels)).save(path)


def metrics_report(made_values, mfde_values, cs: CSAccumulator, free_rate: float, k: int) -> dict:
    made_values = np.asarray(made_values, dtype=np.float64)
    mfde_values = np.asarray(mfde_values, dtype=np.float64)
    report = {
        "samples": int(len(made_values)),
        "k": int(k),
        "made_px": float(made_values.mean()) if len(made_values) else float("nan"),
        "mfde_px": float(mfde_values.mean()) if len(mfde_values) else float("nan"),
        "obstacle_free_rate_pct": float(free_rate),
    }
    report.update({f"cs_{key}": v for key, v in cs.report().as_dict().items()})
    return report


def write_report(path, report: dict):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
