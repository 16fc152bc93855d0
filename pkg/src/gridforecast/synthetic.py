"""Synthetic corridor worlds: scene raster, label map and agent tracks.

Agents enter at dead-end nodes of a path graph, walk along edge centrelines
with a per-agent speed and Gaussian lateral jitter, and at every junction
choose uniformly among the branches other than the one they came from.
Lateral offsets are clipped inside the corridor and corridors are painted
over obstacles, so no generated point can land on an obstacle pixel.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import (
    AnnotationRow,
    SceneEntry,
    SceneRegistry,
    Trajectory,
    format_annotations,
    read_split_manifest,
    write_split_manifest,
)
from .errors import SpecError
from .metrics import OBSTACLE, PATH, TERRAIN, save_label_map

log = logging.getLogger(__name__)

EDGE_MARGIN = 1.5  # px kept between an agent and its corridor border


@dataclass
class SceneSpec:
    width: int
    height: int
    nodes: dict[str, tuple[float, float]]
    edges: list[tuple[str, str, float]]  # (node_a, node_b, corridor width px)
    obstacles: list[dict] = field(default_factory=list)  # {"rect": [x0,y0,x1,y1]} | {"circle": [cx,cy,r]}
    palette: dict[str, tuple[int, int, int]] = field(default_factory=lambda: {
        "path": (196, 196, 188), "terrain": (84, 140, 64), "obstacle": (110, 52, 38)})
    texture_noise: float = 6.0
    speed: tuple[float, float] = (8.0, 12.0)  # px per strided step
    jitter: float = 1.5  # per-point lateral std, px
    lane_std: float = 4.0  # per-agent lateral offset std, px
    stride_frames: int = 12
    max_points: int = 60
    entries: list[str] | None = None  # spawn nodes; default: all dead ends

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["nodes"] = {k: tuple(v) for k, v in d["nodes"].items()}
        d["edges"] = [tuple(e) for e in d["edges"]]
        for key in ("speed",):
            if key in d:
                d[key] = tuple(d[key])
        if "palette" in d:
            d["palette"] = {k: tuple(v) for k, v in d["palette"].items()}
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def adjacency(self) -> dict[str, list[int]]:
        adj = {n: [] for n in self.nodes}
        for i, (a, b, _) in enumerate(self.edges):
            adj[a].append(i)
            adj[b].append(i)
        return adj

    def validate(self):
        if not self.edges:
            raise SpecError("scene spec has no paths")
        if self.width <= 0 or self.height <= 0:
            raise SpecError("canvas must have positive size")
        for a, b, w in self.edges:
            if a not in self.nodes or b not in self.nodes:
                raise SpecError(f"edge {a}-{b} references an unknown node")
            if w <= 2 * EDGE_MARGIN:
                raise SpecError(f"edge {a}-{b} is too narrow ({w} px)")
            if np.allclose(self.nodes[a], self.nodes[b]):
                raise SpecError(f"edge {a}-{b} has zero length")
        speed_lo, speed_hi = self.speed
        if not 0 < speed_lo <= speed_hi:
            raise SpecError("speed range must be positive and ordered")


def _segment_distance(px, py, a, b):
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    t = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def render_label_map(spec: SceneSpec) -> np.ndarray:
    """Per-pixel class codes, evaluated at pixel centres."""
    spec.validate()
    ys, xs = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64) + 0.5
    labels = np.full((spec.height, spec.width), TERRAIN, dtype=np.uint8)
    for ob in spec.obstacles:
        if "rect" in ob:
            x0, y0, x1, y1 = ob["rect"]
            labels[(xs >= x0) & (xs < x1) & (ys >= y0) & (ys < y1)] = OBSTACLE
        elif "circle" in ob:
            cx, cy, r = ob["circle"]
            labels[np.hypot(xs - cx, ys - cy) <= r] = OBSTACLE
        else:
            raise SpecError(f"unknown obstacle shape {ob!r}")
    for a, b, w in spec.edges:
        labels[_segment_distance(xs, ys, spec.nodes[a], spec.nodes[b]) <= w / 2.0] = PATH
    return labels


def render_scene_image(spec: SceneSpec, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    lut = np.array([spec.palette["path"], spec.palette["terrain"], spec.palette["obstacle"]],
                   dtype=np.float64)
    img = lut[labels]
    if spec.texture_noise > 0:
        img = img + rng.normal(0.0, spec.texture_noise, size=img.shape)
    return np.clip(img.round(), 0, 255).astype(np.uint8)


def _walk_route(spec, adj, rng, start_node, entry_edge):
    """Sequence of (edge index, forward?) visited until a dead end or step limit."""
    route = []
    node, edge = start_node, entry_edge
    max_len = spec.max_points * spec.speed[1] * 2
    length = 0.0
    while True:
        a, b, _ = spec.edges[edge]
        forward = a == node
        route.append((edge, forward))
        node = b if forward else a
        length += float(np.hypot(*np.subtract(spec.nodes[b], spec.nodes[a])))
        choices = [e for e in adj[node] if e != edge]
        if not choices or length > max_len:
            return route
        edge = choices[int(rng.integers(len(choices)))]


def _route_geometry(spec, route):
    pts = []
    widths = []
    for edge, forward in route:
        a, b, w = spec.edges[edge]
        p, q = (spec.nodes[a], spec.nodes[b]) if forward else (spec.nodes[b], spec.nodes[a])
        if not pts:
            pts.append(p)
        pts.append(q)
        widths.append(w)
    pts = np.asarray(pts, dtype=np.float64)
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    return pts, seg, seg_len, cum, np.asarray(widths)


def _sample_agent(spec, adj, rng, entries):
    start = entries[int(rng.integers(len(entries)))]
    first_edge = adj[start][int(rng.integers(len(adj[start])))]
    route = _walk_route(spec, adj, rng, start, first_edge)
    pts, seg, seg_len, cum, widths = _route_geometry(spec, route)
    speed = rng.uniform(*spec.speed)
    lane = rng.normal(0.0, spec.lane_std) if spec.lane_std > 0 else 0.0
    s0 = rng.uniform(0.0, speed)
    arc = s0 + speed * np.arange(spec.max_points)
    arc = arc[arc < cum[-1]]
    out = []
    for s in arc:
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        t = (s - cum[i]) / seg_len[i]
        base = pts[i] + t * seg[i]
        normal = np.array([-seg[i, 1], seg[i, 0]]) / seg_len[i]
        lim = widths[i] / 2.0 - EDGE_MARGIN
        d = lane + (rng.normal(0.0, spec.jitter) if spec.jitter > 0 else 0.0)
        p = base + float(np.clip(d, -lim, lim)) * normal
        if not (0.0 <= p[0] < spec.width and 0.0 <= p[1] < spec.height):
            break
        out.append(p)
    return np.asarray(out).reshape(-1, 2)


def generate_synthetic(spec: SceneSpec, n_agents: int, seed: int):
    """Return ``(scene image, label map, trajectories)``; deterministic in ``seed``."""
    spec.validate()
    rng = np.random.default_rng(seed)
    labels = render_label_map(spec)
    image = render_scene_image(spec, labels, rng)
    adj = spec.adjacency()
    entries = spec.entries or [n for n, e in adj.items() if len(e) == 1]
    if not entries:
        raise SpecError("path graph has no entry nodes")
    for n in entries:
        if n not in adj or not adj[n]:
            raise SpecError(f"entry node {n!r} has no incident path")
    tracks = []
    for i in range(n_agents):
        pts = _sample_agent(spec, adj, rng, entries)
        if len(pts) == 0:
            continue
        start_frame = int(rng.integers(0, 1000)) * spec.stride_frames
        frames = start_frame + spec.stride_frames * np.arange(len(pts))
        tracks.append(Trajectory(agent_id=str(i), label="Pedestrian", frames=frames, points=pts))
    return image, labels, tracks


def tracks_to_rows(tracks, half_box: float = 5.0) -> list[AnnotationRow]:
    rows = []
    for tid, t in enumerate(tracks):
        for f, (x, y) in zip(t.frames, t.points):
            rows.append(AnnotationRow(tid, x - half_box, y - half_box, x + half_box, y + half_box,
                                      int(f), 0, 0, 0, t.label))
    return rows


# --- presets -------------------------------------------------------------

def corridor_spec(length: int = 480, width: float = 48.0, **kw) -> SceneSpec:
    h = 160
    return SceneSpec(
        width=length, height=h,
        nodes={"W": (0.0, h / 2.0), "E": (float(length), h / 2.0)},
        edges=[("W", "E", width)],
        obstacles=[{"rect": [0, 0, length, h / 2.0 - width]},
                   {"rect": [0, h / 2.0 + width, length, h]}],
        **kw,
    )


def t_junction_spec(size: int = 480, width: float = 48.0, **kw) -> SceneSpec:
    c = size / 2.0
    spec = SceneSpec(
        width=size, height=size,
        nodes={"S": (c, float(size)), "J": (c, c), "L": (0.0, c), "R": (float(size), c)},
        edges=[("S", "J", width), ("J", "L", width), ("J", "R", width)],
        obstacles=[{"rect": [0, 0, size, c - width / 2.0]},
                   {"rect": [0, c + width / 2.0, c - width / 2.0, size]},
                   {"rect": [c + width / 2.0, c + width / 2.0, size, size]}],
        entries=["S"],
        **kw,
    )
    return spec


def crossroads_world_spec(**kw) -> SceneSpec:
    """640x640 world: a 2x2 grid of corridors between building blocks.

    Corridors are 36 px wide with a 12 px verge of terrain on each side;
    everything else is obstacle.
    """
    size = 640
    lines = (176.0, 464.0)
    width = 36.0
    verge = 12.0
    nodes = {}
    for i, x in enumerate(lines):
        nodes[f"N{i}"] = (x, 0.0)
        nodes[f"S{i}"] = (x, float(size))
        nodes[f"W{i}"] = (0.0, x)
        nodes[f"E{i}"] = (float(size), x)
        for j, y in enumerate(lines):
            nodes[f"X{i}{j}"] = (x, y)
    edges = []
    for i in range(2):
        edges += [(f"N{i}", f"X{i}0", width), (f"X{i}0", f"X{i}1", width), (f"X{i}1", f"S{i}", width)]
        edges += [(f"W{i}", f"X0{i}", width), (f"X0{i}", f"X1{i}", width), (f"X1{i}", f"E{i}", width)]
    # building blocks between corridors, leaving terrain verges along every corridor
    cuts = [0.0, *lines, float(size)]
    half = width / 2.0 + verge
    obstacles = []
    for a in range(3):
        for b in range(3):
            x0 = cuts[a] + (half if a > 0 else 0.0)
            x1 = cuts[a + 1] - (half if a < 2 else 0.0)
            y0 = cuts[b] + (half if b > 0 else 0.0)
            y1 = cuts[b + 1] - (half if b < 2 else 0.0)
            obstacles.append({"rect": [x0, y0, x1, y1]})
    return SceneSpec(width=size, height=size, nodes=nodes, edges=edges, obstacles=obstacles, **kw)


PRESETS = {
    "corridor": corridor_spec,
    "t_junction": t_junction_spec,
    "crossroads": crossroads_world_spec,
}


def load_scene_spec(name_or_path) -> SceneSpec:
    if str(name_or_path) in PRESETS:
        return PRESETS[str(name_or_path)]()
    path = Path(name_or_path)
    if not path.exists():
        raise SpecError(f"unknown preset or missing spec file: {name_or_path}")
    return SceneSpec.from_dict(json.loads(path.read_text()))


def write_dataset(out_dir, spec: SceneSpec, n_agents: int, seed: int, scene_id: str = "synth",
                  split: str = "train") -> SceneRegistry:
    """Emit a synthetic scene in the same on-disk formats as real data.

    Writes ``<scene_id>.png``, ``<scene_id>_labels.png``,
    ``<scene_id>_annotations.txt``, plus ``scenes.txt`` and ``splits.txt``
    manifests (appending to existing ones).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    image, labels, tracks = generate_synthetic(spec, n_agents, seed)
    img_path = out / f"{scene_id}.png"
    lab_path = out / f"{scene_id}_labels.png"
    ann_path = out / f"{scene_id}_annotations.txt"
    Image.fromarray(image).save(img_path)
    save_label_map(lab_path, labels)
    ann_path.write_text(format_annotations(tracks_to_rows(tracks)))

    manifest = out / "scenes.txt"
    registry = SceneRegistry.from_manifest(manifest) if manifest.exists() else SceneRegistry()
    registry.entries[scene_id] = SceneEntry(img_path, lab_path, ann_path)
    registry.write(manifest)

    split_path = out / "splits.txt"
    splits = read_split_manifest(split_path) if split_path.exists() else {}
    splits[scene_id] = split
    write_split_manifest(split_path, splits)
    log.info("wrote %d tracks for scene %s to %s", len(tracks), scene_id, out)
    return registry
