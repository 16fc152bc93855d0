"""Agent-centric frames and rasterization of trajectories and scenes into grids.

Axis convention used everywhere in the package: agent-frame ``+x`` maps to
increasing grid column and ``+y`` to increasing grid row, with the agent's
position at the reference time sitting at ``center_cell``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, MissingSceneError

OUT_OF_GRID = None


@dataclass(frozen=True)
class GridGeometry:
    n: int = 128
    scale: float = 10.0

    def __post_init__(self):
        if self.n <= 0:
            raise ConfigError(f"grid size must be positive, got {self.n}")
        if not self.scale > 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")

    @property
    def center_cell(self) -> tuple[int, int]:
        return (self.n // 2, self.n // 2)


@dataclass
class GridSample:
    """One training/evaluation example.

    ``past_xy`` and ``future_xy`` keep the agent-frame pixel coordinates the
    grids were rasterized from, so augmentation can re-rasterize them and
    metrics can be computed without decoding grids.
    """

    past_grid: np.ndarray  # bool (t_h, N, N)
    scene_grid: np.ndarray  # float32 (3, N, N), in [0, 1]
    target_grids: np.ndarray  # bool (t_f, N, N)
    anchor_world: tuple[float, float]
    scale: float
    past_xy: np.ndarray  # (t_h, 2) agent frame, pixels
    future_xy: np.ndarray  # (t_f, 2) agent frame, pixels
    metadata: dict = field(default_factory=dict)

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.past_grid.shape[-1], self.scale)

    @property
    def degenerate(self) -> bool:
        return bool(self.metadata.get("degenerate", False))


def to_agent_frame(points, anchor) -> np.ndarray:
    """Translate ``points`` (T, 2) so that ``anchor`` becomes the origin."""
    return np.asarray(points, dtype=np.float64) - np.asarray(anchor, dtype=np.float64)


def from_agent_frame(points, anchor) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) + np.asarray(anchor, dtype=np.float64)


def world_to_cell(p, geom: GridGeometry):
    """Map one agent-frame point to ``(row, col)``, or ``OUT_OF_GRID``."""
    x, y = float(p[0]), float(p[1])
    row_c, col_c = geom.center_cell
    col = math.floor(x / geom.scale) + col_c
    row = math.floor(y / geom.scale) + row_c
    if 0 <= row < geom.n and 0 <= col < geom.n:
        return (row, col)
    return OUT_OF_GRID


def points_to_cells(points, geom: GridGeometry):
    """Vectorised ``world_to_cell``: returns ``rows, cols, inside`` arrays."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    row_c, col_c = geom.center_cell
    finite = np.isfinite(pts).all(axis=1)
    safe = np.where(finite[:, None], pts, 0.0)
    cols = np.floor(safe[:, 0] / geom.scale).astype(np.int64) + col_c
    rows = np.floor(safe[:, 1] / geom.scale).astype(np.int64) + row_c
    inside = finite & (rows >= 0) & (rows < geom.n) & (cols >= 0) & (cols < geom.n)
    return rows, cols, inside


def rasterize(points, geom: GridGeometry) -> np.ndarray:
    """One boolean channel per point, with a single set cell when in extent."""
    rows, cols, inside = points_to_cells(points, geom)
    grid = np.zeros((len(rows), geom.n, geom.n), dtype=bool)
    idx = np.flatnonzero(inside)
    grid[idx, rows[idx], cols[idx]] = True
    return grid


def rasterize_past(window, geom: GridGeometry) -> np.ndarray:
    return rasterize(window, geom)


def rasterize_target(window, geom: GridGeometry) -> np.ndarray:
    return rasterize(window, geom)


def _overlap_weights(start: float, n: int, scale: float, size: int) -> np.ndarray:
    # Fraction of each cell [start + j*scale, start + (j+1)*scale) covered by pixel p.
    lo = start + np.arange(n, dtype=np.float64)[:, None] * scale
    hi = lo + scale
    p = np.arange(size, dtype=np.float64)[None, :]
    overlap = np.minimum(hi, p + 1.0) - np.maximum(lo, p)
    return np.clip(overlap, 0.0, None) / scale


def crop_scene(scene_image, anchor, geom: GridGeometry) -> np.ndarray:
    """Area-averaged (3, N, N) crop of an RGB image centred on ``anchor``.

    Cell ``(r, c)`` averages the world pixels that ``world_to_cell`` would
    send to it. Parts of the window outside the image count as black.
    """
    if scene_image is None:
        raise MissingSceneError("<unknown>")
    img = np.asarray(scene_image)
    if img.ndim != 3 or img.shape[2] < 3:
        raise ConfigError(f"expected an HxWx3 RGB image, got shape {img.shape}")
    img = img[:, :, :3].astype(np.float64)
    if img.size and img.max() > 1.0:
        img = img / 255.0
    row_c, col_c = geom.center_cell
    ax, ay = float(anchor[0]), float(anchor[1])
    wx = _overlap_weights(ax - col_c * geom.scale, geom.n, geom.scale, img.shape[1])
    wy = _overlap_weights(ay - row_c * geom.scale, geom.n, geom.scale, img.shape[0])
    out = np.einsum("rh,hwc,qw->crq", wy, img, wx, optimize=True)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _cos_sin(angle: float) -> tuple[float, float]:
    a = float(angle) % 360.0
    exact = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}
    if a in exact:
        return exact[a]
    rad = math.radians(a)
    return math.cos(rad), math.sin(rad)


def rotate_points(points, angle: float) -> np.ndarray:
    """Counter-clockwise rotation (in x-right, y-up terms) about the origin."""
    c, s = _cos_sin(angle)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    return np.stack([c * x - s * y, s * x + c * y], axis=1)


def rotate_scene(scene_grid: np.ndarray, angle: float) -> np.ndarray:
    """Bilinear rotation of a (C, N, N) grid about the agent position.

    Consistent with ``rotate_points``: content at agent-frame ``p`` moves to
    ``rotate_points(p, angle)``. Samples falling outside the grid are zero.
    """
    if float(angle) % 360.0 == 0.0:
        return scene_grid.copy()
    c, s = _cos_sin(angle)
    n = scene_grid.shape[-1]
    center = n // 2
    # output index (row, col) -> input index, both on cell centres
    matrix = np.array([[c, -s], [s, c]])
    shift = np.array([0.5 - center, 0.5 - center])
    offset = matrix @ shift - shift
    out = np.empty_like(scene_grid)
    for ch in range(scene_grid.shape[0]):
        out[ch] = ndimage.affine_transform(
            scene_grid[ch], matrix, offset=offset, order=1, mode="constant", cval=0.0
        )
    return out


def make_sample(past_world, future_world, scene_image, geom: GridGeometry, metadata=None) -> GridSample:
    """Build a GridSample from world-pixel windows; the anchor is the last past point."""
    past_world = np.asarray(past_world, dtype=np.float64)
    future_world = np.asarray(future_world, dtype=np.float64)
    anchor = past_world[-1]
    past_xy = to_agent_frame(past_world, anchor)
    future_xy = to_agent_frame(future_world, anchor)
    target = rasterize_target(future_xy, geom)
    meta = dict(metadata or {})
    meta["degenerate"] = not target.any()
    meta.setdefault("angle", 0.0)
    return GridSample(
        past_grid=rasterize_past(past_xy, geom),
        scene_grid=crop_scene(scene_image, anchor, geom),
        target_grids=target,
        anchor_world=(float(anchor[0]), float(anchor[1])),
        scale=float(geom.scale),
        past_xy=past_xy,
        future_xy=future_xy,
        metadata=meta,
    )


def rotate_sample(sample: GridSample, angle: float) -> GridSample:
    """Rotate every grid of ``sample`` about the agent by ``angle`` degrees.

    Boolean grids are re-rasterized from rotated coordinates; the scene is
    resampled bilinearly. The world anchor does not move.
    """
    angle = float(angle)
    if not 0.0 <= angle < 360.0:
        raise ConfigError(f"rotation angle must lie in [0, 360), got {angle}")
    geom = sample.geometry
    past_xy = rotate_points(sample.past_xy, angle)
    future_xy = rotate_points(sample.future_xy, angle)
    target = rasterize_target(future_xy, geom)
    meta = dict(sample.metadata)
    meta["angle"] = (float(meta.get("angle", 0.0)) + angle) % 360.0
    meta["degenerate"] = not target.any()
    return dataclasses.replace(
        sample,
        past_grid=rasterize_past(past_xy, geom),
        scene_grid=rotate_scene(sample.scene_grid, angle),
        target_grids=target,
        past_xy=past_xy,
        future_xy=future_xy,
        metadata=meta,
    )
