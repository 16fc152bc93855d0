"""SDD/TrajNet annotation ingestion and windowing into GridSamples."""
from __future__ import annotations

import io
import json
import logging
import shlex
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from PIL import Image

from .errors import ConfigError, MissingSceneError, ParseError
from .grids import GridGeometry, GridSample, make_sample

log = logging.getLogger(__name__)

T_HIST = 8
T_FUT = 12
DEFAULT_STRIDE = 12  # frames between strided points: 0.4 s at 30 fps

SPLITS = ("train", "val", "test")


class AnnotationRow(NamedTuple):
    track_id: int
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    frame: int
    lost: int
    occluded: int
    generated: int
    label: str


@dataclass
class Trajectory:
    agent_id: str
    label: str
    frames: np.ndarray  # (T,) int, strictly increasing
    points: np.ndarray  # (T, 2) float pixels

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.frames) == 0 or len(self.frames) != len(self.points):
            raise ValueError("trajectory needs >= 1 point and one frame per point")
        if np.any(np.diff(self.frames) <= 0):
            raise ValueError(f"frames of {self.agent_id} are not strictly increasing")
        if not np.isfinite(self.points).all():
            raise ValueError(f"non-finite coordinates in {self.agent_id}")

    def __len__(self):
        return len(self.frames)


def parse_annotations(stream) -> list[AnnotationRow]:
    """Parse whitespace-separated SDD annotation rows.

    Accepts a path, a text stream or a string. Raises ``ParseError`` carrying
    the 1-based line number of the first malformed row.
    """
    if isinstance(stream, (str, Path)) and Path(stream).exists():
        with open(stream) as fh:
            return parse_annotations(fh)
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows = []
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            fields = shlex.split(line)
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        if len(fields) != 10:
            raise ParseError(lineno, f"expected 10 fields, got {len(fields)}")
        try:
            track_id, frame, lost, occluded, generated = (
                int(fields[i]) for i in (0, 5, 6, 7, 8)
            )
            xmin, ymin, xmax, ymax = (float(v) for v in fields[1:5])
        except ValueError:
            raise ParseError(lineno, "non-numeric field") from None
        if xmin > xmax or ymin > ymax or frame < 0:
            raise ParseError(lineno, "ill-formed bounding box or negative frame")
        if lost not in (0, 1) or occluded not in (0, 1) or generated not in (0, 1):
            raise ParseError(lineno, "flags must be 0 or 1")
        rows.append(AnnotationRow(track_id, xmin, ymin, xmax, ymax, frame,
                                  lost, occluded, generated, fields[9]))
    return rows


def format_annotations(rows: Iterable[AnnotationRow]) -> str:
    out = []
    for r in rows:
        out.append(
            f"{r.track_id} {r.xmin:g} {r.ymin:g} {r.xmax:g} {r.ymax:g} {r.frame} "
            f"{r.lost} {r.occluded} {r.generated} \"{r.label}\""
        )
    return "\n".join(out) + ("\n" if out else "")


def infer_stride(rows: Iterable[AnnotationRow]) -> int:
    """Smallest positive frame step found within any track (1 if none)."""
    by_track = defaultdict(list)
    for r in rows:
        by_track[r.track_id].append(r.frame)
    best = None
    for frames in by_track.values():
        d = np.diff(np.unique(frames))
        if d.size:
            m = int(d.min())
            best = m if best is None else min(best, m)
    return best or 1


def build_tracks(rows, stride: int | None = None, scene_id: str = "") -> list[Trajectory]:
    """Group rows into trajectories of bounding-box centres.

    Lost rows are dropped. A track whose retained frames are not contiguous at
    ``stride`` is split, each segment receiving its own agent id.
    """
    rows = list(rows)
    if stride is None:
        stride = infer_stride(rows)
    by_track = defaultdict(list)
    for r in rows:
        if r.lost:
            continue
        by_track[r.track_id].append(r)
    tracks = []
    prefix = f"{scene_id}:" if scene_id else ""
    for track_id in sorted(by_track):
        seq = sorted(by_track[track_id], key=lambda r: r.frame)
        segments = [[seq[0]]]
        for prev, cur in zip(seq, seq[1:]):
            if cur.frame == prev.frame:
                continue
            if cur.frame - prev.frame != stride:
                segments.append([])
            segments[-1].append(cur)
        for i, seg in enumerate(segments):
            agent_id = f"{prefix}{track_id}" if len(segments) == 1 else f"{prefix}{track_id}.{i}"
            tracks.append(Trajectory(
                agent_id=agent_id,
                label=seg[0].label,
                frames=[r.frame for r in seg],
                points=[((r.xmin + r.xmax) / 2.0, (r.ymin + r.ymax) / 2.0) for r in seg],
            ))
    return tracks


def window_indices(track: Trajectory, stride_frames: int = DEFAULT_STRIDE,
                   t_h: int = T_HIST, t_f: int = T_FUT) -> list[np.ndarray]:
    """Index arrays (t_h + t_f,) into ``track`` for every valid strided window.

    Anchors are spaced one stride apart starting from the first frame.
    """
    lookup = {int(f): i for i, f in enumerate(track.frames)}
    first = int(track.frames[0])
    last = int(track.frames[-1])
    offsets = np.arange(-(t_h - 1), t_f + 1) * stride_frames
    windows = []
    for anchor in range(first, last + 1, stride_frames):
        idx = [lookup.get(anchor + int(o)) for o in offsets]
        if all(i is not None for i in idx):
            windows.append(np.asarray(idx))
    return windows


def window_samples(tracks, stride_frames: int = DEFAULT_STRIDE, geom: GridGeometry | None = None,
                   scene_image=None, scene_id: str = "", t_h: int = T_HIST,
                   t_f: int = T_FUT) -> list[GridSample]:
    geom = geom or GridGeometry()
    samples = []
    for track in tracks:
        for idx in window_indices(track, stride_frames, t_h, t_f):
            pts = track.points[idx]
            meta = {
                "scene_id": scene_id,
                "agent_id": track.agent_id,
                "frame": int(track.frames[idx[t_h - 1]]),
                "label": track.label,
            }
            samples.append(make_sample(pts[:t_h], pts[t_h:], scene_image, geom, meta))
    return samples


# --- manifests -------------------------------------------------------------

def read_split_manifest(path) -> dict[str, str]:
    """``scene_id split`` per line; ``#`` starts a comment."""
    splits = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in SPLITS:
            raise ParseError(lineno, f"expected '<scene_id> <{'|'.join(SPLITS)}>'")
        splits[parts[0]] = parts[1]
    return splits


def write_split_manifest(path, splits: dict[str, str]):
    Path(path).write_text("".join(f"{k} {v}\n" for k, v in splits.items()))


@dataclass
class SceneEntry:
    image: Path
    labels: Path | None = None
    annotations: Path | None = None


class SceneRegistry:
    """Scene id -> image / label map / annotation files.

    Manifest lines are ``scene_id image_path [label_path [annotation_path]]``,
    with relative paths resolved against the manifest's directory.
    """

    def __init__(self, entries: dict[str, SceneEntry] | None = None):
        self.entries = dict(entries or {})
        self._images = {}

    @classmethod
    def from_manifest(cls, path) -> "SceneRegistry":
        path = Path(path)
        base = path.parent
        entries = {}
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = shlex.split(line)
            if not 2 <= len(parts) <= 4:
                raise ParseError(lineno, "expected '<scene_id> <image> [labels] [annotations]'")
            resolved = [(base / p) if p != "-" else None for p in parts[1:]]
            resolved += [None] * (3 - len(resolved))
            entries[parts[0]] = SceneEntry(*resolved)
        return cls(entries)

    def write(self, path):
        path = Path(path)
        lines = []
        for sid, e in self.entries.items():
            cols = [e.image, e.labels, e.annotations]
            rel = [_relpath(p, path.parent) if p is not None else "-" for p in cols]
            while rel and rel[-1] == "-":
                rel.pop()
            lines.append(" ".join([sid, *rel]))
        path.write_text("\n".join(lines) + "\n")

    def __contains__(self, scene_id):
        return scene_id in self.entries

    def __iter__(self):
        return iter(self.entries)

    def image(self, scene_id) -> np.ndarray:
        if scene_id not in self.entries or self.entries[scene_id].image is None:
            raise MissingSceneError(scene_id)
        if scene_id not in self._images:
            path = self.entries[scene_id].image
            if not Path(path).exists():
                raise MissingSceneError(scene_id)
            self._images[scene_id] = np.asarray(Image.open(path).convert("RGB"))
        return self._images[scene_id]

    def label_path(self, scene_id):
        entry = self.entries.get(scene_id)
        if entry is None or entry.labels is None:
            raise MissingSceneError(scene_id)
        return entry.labels


def _relpath(p: Path, base: Path) -> str:
    try:
        return str(Path(p).resolve().relative_to(base.resolve()))
    except ValueError:
        return str(Path(p).resolve())


# --- sample store ------------------------------------------------------------

STORE_VERSION = 1


def save_store(path, samples: list[GridSample], extra: dict | None = None):
    """Write samples to ``path`` (a directory): ``samples.npz`` + ``meta.json``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not samples:
        raise ConfigError("refusing to write an empty sample store")
    np.savez_compressed(
        path / "samples.npz",
        past=np.packbits(np.stack([s.past_grid for s in samples]), axis=-1),
        target=np.packbits(np.stack([s.target_grids for s in samples]), axis=-1),
        scene=np.stack([(s.scene_grid * 255.0).round().astype(np.uint8) for s in samples]),
        past_xy=np.stack([s.past_xy for s in samples]),
        future_xy=np.stack([s.future_xy for s in samples]),
        anchor=np.array([s.anchor_world for s in samples]),
        scale=np.array([s.scale for s in samples]),
    )
    meta = {
        "version": STORE_VERSION,
        "n": int(samples[0].past_grid.shape[-1]),
        "count": len(samples),
        "metadata": [s.metadata for s in samples],
    }
    meta.update(extra or {})
    (path / "meta.json").write_text(json.dumps(meta, indent=1, default=_json_default))


def load_store(path) -> tuple[list[GridSample], dict]:
    path = Path(path)
    if not (path / "meta.json").exists():
        raise ConfigError(f"{path} is not a sample store (meta.json missing)")
    meta = json.loads((path / "meta.json").read_text())
    if meta.get("version") != STORE_VERSION:
        raise ConfigError(f"unsupported store version {meta.get('version')}")
    n = meta["n"]
    with np.load(path / "samples.npz") as z:
        past = np.unpackbits(z["past"], axis=-1, count=n).astype(bool)
        target = np.unpackbits(z["target"], axis=-1, count=n).astype(bool)
        scene = z["scene"].astype(np.float32) / 255.0
        past_xy, future_xy = z["past_xy"], z["future_xy"]
        anchor, scale = z["anchor"], z["scale"]
    samples = [
        GridSample(past[i], scene[i], target[i], tuple(anchor[i]), float(scale[i]),
                   past_xy[i], future_xy[i], dict(meta["metadata"][i]))
        for i in range(meta["count"])
    ]
    return samples, meta


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")
