"""Second stage: occupancy grids -> K explicit trajectories."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ConfigError, LengthMismatchError, ShapeError
from .convlstm import ConvLSTMCell
from .gridgen import init_weights


@dataclass
class SamplerConfig:
    k: int = 5
    t_f: int = 12
    n: int = 128
    convlstm_hidden: int = 16
    convlstm_kernel: tuple[int, int] = (11, 11)
    pool_size: int = 8
    fc_hidden: int = 256
    coord_scale: float | None = None  # cells per unit head output; None -> n
    coord_origin: str = "corner"  # head output 0 -> grid corner ("corner") or the agent ("agent")
    coord_channels: bool = True  # append x/y position maps to the ConvLSTM input
    init_std: float = 0.02

    def __post_init__(self):
        k = self.convlstm_kernel
        self.convlstm_kernel = (int(k), int(k)) if np.ndim(k) == 0 else tuple(int(v) for v in k)
        self.validate()

    def validate(self):
        if self.k < 1:
            raise ConfigError(f"K must be >= 1, got {self.k}")
        for name in ("t_f", "n", "convlstm_hidden", "pool_size", "fc_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.pool_size > self.n:
            raise ConfigError("pool_size cannot exceed the grid size")
        if self.coord_origin not in ("corner", "agent"):
            raise ConfigError(f"coord_origin must be 'corner' or 'agent', got {self.coord_origin!r}")

    @property
    def output_scale(self) -> float:
        return float(self.coord_scale) if self.coord_scale else float(self.n)

    @property
    def output_offset(self) -> float:
        # grid-image coordinates put the agent at n/2 cells from the corner
        return -self.n / 2.0 if self.coord_origin == "corner" else 0.0

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def desk_sampler_config(**overrides) -> SamplerConfig:
    base = dict(n=32, convlstm_kernel=(3, 3), pool_size=32, fc_hidden=128)
    base.update(overrides)
    return SamplerConfig(**base)


class TrajectorySampler(nn.Module):
    """ConvLSTM over the probability grids with a pooled fully connected head.

    At each of the t_f steps the hidden state is max-pooled to
    ``pool_size x pool_size``, flattened, and mapped to K positions in
    grid-image units (``coord_origin="corner"``), then shifted to the agent
    frame. Output shape (B, K, t_f, 2), agent-frame grid cells.
    """

    def __init__(self, cfg: SamplerConfig):
        super().__init__()
        self.cfg = cfg
        extra = 2 if cfg.coord_channels else 0
        self.cell = ConvLSTMCell(1 + extra, cfg.convlstm_hidden, cfg.convlstm_kernel)
        ramp = torch.linspace(-1.0, 1.0, cfg.n)
        self.register_buffer("coords", torch.stack(torch.meshgrid(ramp, ramp, indexing="xy"))[None],
                             persistent=False)
        flat = cfg.convlstm_hidden * cfg.pool_size * cfg.pool_size
        self.fc = nn.Sequential(nn.Linear(flat, cfg.fc_hidden), nn.ReLU(inplace=True),
                                nn.Linear(cfg.fc_hidden, 2 * cfg.k))
        init_weights(self, cfg.init_std)

    def forward(self, probs):
        if probs.dim() == 3:
            probs = probs[None]
        if probs.shape[1] != self.cfg.t_f:
            raise ShapeError(f"expected {self.cfg.t_f} probability grids, got {probs.shape[1]}")
        state = None
        steps = []
        coords = self.coords.to(probs.dtype).expand(probs.shape[0], -1, -1, -1)
        for t in range(self.cfg.t_f):
            x = probs[:, t:t + 1]
            if self.cfg.coord_channels:
                x = torch.cat([x, coords], dim=1)
            state = self.cell(x, state)
            pooled = F.adaptive_max_pool2d(state[0], self.cfg.pool_size)
            steps.append(self.fc(pooled.flatten(1)).view(-1, self.cfg.k, 2))
        return torch.stack(steps, dim=2) * self.cfg.output_scale + self.cfg.output_offset


@dataclass
class TrajectorySet:
    """K trajectories of t_f agent-frame positions, in grid cells."""

    trajectories: np.ndarray  # (K, t_f, 2)

    def __post_init__(self):
        self.trajectories = np.asarray(self.trajectories, dtype=np.float64)
        if self.trajectories.ndim != 3 or self.trajectories.shape[-1] != 2:
            raise ShapeError(f"trajectory set must be (K, T, 2), got {self.trajectories.shape}")

    @property
    def k(self):
        return self.trajectories.shape[0]

    def to_world(self, sample) -> np.ndarray:
        return to_world(self.trajectories, sample.scale, sample.anchor_world)

    @classmethod
    def from_world(cls, world, sample) -> "TrajectorySet":
        return cls(from_world(world, sample.scale, sample.anchor_world))


def to_world(cells, scale, anchor) -> np.ndarray:
    """Agent-frame grid units -> world pixels: ``cells * scale + anchor``."""
    return np.asarray(cells, dtype=np.float64) * float(scale) + np.asarray(anchor, dtype=np.float64)


def from_world(world, scale, anchor) -> np.ndarray:
    return (np.asarray(world, dtype=np.float64) - np.asarray(anchor, dtype=np.float64)) / float(scale)


def sample_trajectories(grids, model: TrajectorySampler) -> TrajectorySet:
    """K trajectories for one probability-grid sequence (t_f, N, N)."""
    was_training = model.training
    model.eval()
    p = next(model.parameters())
    with torch.no_grad():
        out = model(torch.as_tensor(np.asarray(grids), dtype=p.dtype, device=p.device)[None])[0]
    model.train(was_training)
    return TrajectorySet(out.cpu().numpy())


def variety_loss(pred, gt, relax: float = 0.0):
    """Best-of-K average displacement error.

    ``pred`` (B, K, T, 2) or (K, T, 2), ``gt`` (B, T, 2) or (T, 2). The mean
    over the batch of min over K of the per-trajectory ADE; gradients reach
    only the arg-min trajectory of each sample. With ``relax`` > 0 the
    winner gets weight ``1 - relax`` and the other K-1 share ``relax``
    (relaxed winner-takes-all), which keeps rarely-winning candidates from
    drifting.
    """
    if pred.dim() == 3:
        pred, gt = pred[None], gt[None]
    if pred.shape[-2] != gt.shape[-2]:
        raise LengthMismatchError(f"prediction length {pred.shape[-2]} != ground truth {gt.shape[-2]}")
    if not 0.0 <= relax < 1.0:
        raise ValueError(f"relax must lie in [0, 1), got {relax}")
    ade = torch.linalg.vector_norm(pred - gt[:, None], dim=-1).mean(dim=-1)
    best = ade.min(dim=1).values
    k = ade.shape[1]
    if relax == 0.0 or k == 1:
        return best.mean()
    others = (ade.sum(dim=1) - best) / (k - 1)
    return ((1.0 - relax) * best + relax * others).mean()
