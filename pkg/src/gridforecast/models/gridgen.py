"""First stage: past-trajectory and scene grids -> per-step occupancy grids."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ConfigError
from .convlstm import ConvLSTMCell

log = logging.getLogger(__name__)

FUSED_CHANNELS = 20
OCCUPIED = 1  # index of the occupied class along the logit axis; 0 = free


@dataclass
class GridGenConfig:
    n: int = 128
    t_h: int = 8
    t_f: int = 12
    unet_blocks: int = 7
    unet_filters: int = 64
    unet_max_filters: int = 512
    resnet_blocks: int = 9
    resnet_filters: int = 64
    resnet_downsamples: int = 2
    traj_feat_channels: int = 10
    scene_feat_channels: int = 10
    convlstm_hidden: int = 16
    convlstm_kernel: tuple[int, int] = (11, 11)
    dropout: float = 0.5
    leaky_slope: float = 0.2
    init_std: float = 0.02
    positive_class_weight: float = 1024.0

    def __post_init__(self):
        k = self.convlstm_kernel
        self.convlstm_kernel = (int(k), int(k)) if np.ndim(k) == 0 else tuple(int(v) for v in k)
        self.validate()

    def validate(self):
        counts = {k: getattr(self, k) for k in (
            "n", "t_h", "t_f", "unet_blocks", "unet_filters", "unet_max_filters", "resnet_blocks",
            "resnet_filters", "traj_feat_channels", "scene_feat_channels", "convlstm_hidden")}
        for name, v in counts.items():
            if int(v) <= 0:
                raise ConfigError(f"{name} must be positive, got {v}")
        if self.traj_feat_channels + self.scene_feat_channels != FUSED_CHANNELS:
            raise ConfigError(
                f"trajectory + scene feature channels must sum to {FUSED_CHANNELS}, got "
                f"{self.traj_feat_channels} + {self.scene_feat_channels}")
        if self.n % (2 ** self.unet_blocks):
            raise ConfigError(f"grid size {self.n} not divisible by 2^{self.unet_blocks}")
        if self.n % (2 ** self.resnet_downsamples):
            raise ConfigError(f"grid size {self.n} not divisible by 2^{self.resnet_downsamples}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not self.positive_class_weight > 0:
            raise ConfigError("positive_class_weight must be positive")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def desk_config(**overrides) -> GridGenConfig:
    """Reduced grid and widths that train in minutes on one CPU core."""
    base = dict(n=32, unet_blocks=5, unet_filters=16, unet_max_filters=64,
                resnet_filters=16, convlstm_kernel=(3, 3), positive_class_weight=64.0)
    base.update(overrides)
    return GridGenConfig(**base)


def init_weights(module: nn.Module, std: float = 0.02):
    """Zero-mean Gaussian conv/linear weights, BatchNorm scales around one."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, std)
            nn.init.zeros_(m.bias)


class UNetEncoder(nn.Module):
    """U-Net over the past-trajectory grids.

    ``blocks`` 4x4/stride-2 downsampling convs reach an ``n / 2**blocks``
    bottleneck; transposed convs climb back with skip connections. The last
    layer is linear (no tanh).
    """

    def __init__(self, in_channels, out_channels, blocks=7, filters=64, max_filters=512,
                 dropout=0.5, leaky_slope=0.2):
        super().__init__()
        widths = [min(filters * 2 ** i, max_filters) for i in range(blocks)]
        self.down = nn.ModuleList()
        for i, w in enumerate(widths):
            layers = [nn.Conv2d(in_channels if i == 0 else widths[i - 1], w, 4, 2, 1, bias=False)]
            if i < blocks - 1:  # batch statistics at a 1x1 bottleneck break for batch size 1
                layers.append(nn.BatchNorm2d(w))
            layers.append(nn.LeakyReLU(leaky_slope, inplace=True))
            self.down.append(nn.Sequential(*layers))
        self.up = nn.ModuleList()
        for j in range(blocks):
            c_in = widths[j] if j == blocks - 1 else 2 * widths[j]
            if j == 0:
                self.up.append(nn.ConvTranspose2d(c_in, out_channels, 4, 2, 1))
                continue
            layers = [nn.ConvTranspose2d(c_in, widths[j - 1], 4, 2, 1, bias=False),
                      nn.BatchNorm2d(widths[j - 1])]
            if dropout > 0 and 1 <= j <= blocks - 2 and j >= blocks - 4:
                layers.append(nn.Dropout(dropout))
            layers.append(nn.ReLU(inplace=True))
            self.up.append(nn.Sequential(*layers))

    def forward(self, x):
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
        x = skips.pop()
        for j in range(len(self.up) - 1, -1, -1):
            if j < len(self.up) - 1:
                x = torch.cat([x, skips.pop()], dim=1)
            x = self.up[j](x)
        return x


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.branch = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(channels, channels, 3, bias=False),
            nn.BatchNorm2d(channels), nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1), nn.Conv2d(channels, channels, 3, bias=False),
            nn.BatchNorm2d(channels),
        )

    def forward(self, x):
        return x + self.branch(x)


class ResNetEncoder(nn.Module):
    """Image-translation ResNet over the scene grid, returning N x N features."""

    def __init__(self, in_channels, out_channels, blocks=9, filters=64, downsamples=2,
                 leaky_slope=0.2):
        super().__init__()
        layers = [nn.ReflectionPad2d(3), nn.Conv2d(in_channels, filters, 7, bias=False),
                  nn.BatchNorm2d(filters), nn.ReLU(inplace=True)]
        w = filters
        for _ in range(downsamples):
            layers += [nn.Conv2d(w, 2 * w, 4, 2, 1, bias=False), nn.BatchNorm2d(2 * w),
                       nn.LeakyReLU(leaky_slope, inplace=True)]
            w *= 2
        layers += [ResidualBlock(w) for _ in range(blocks)]
        for _ in range(downsamples):
            layers += [nn.ConvTranspose2d(w, w // 2, 4, 2, 1, bias=False), nn.BatchNorm2d(w // 2),
                       nn.ReLU(inplace=True)]
            w //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(w, out_channels, 7)]
        self.net = nn.Sequential(*layers)
        self.out_channels = out_channels

    def forward(self, x):
        return self.net(x)


def build_trajectory_encoder(cfg: GridGenConfig) -> UNetEncoder:
    cfg.validate()
    enc = UNetEncoder(cfg.t_h, cfg.traj_feat_channels, cfg.unet_blocks, cfg.unet_filters,
                      cfg.unet_max_filters, cfg.dropout, cfg.leaky_slope)
    init_weights(enc, cfg.init_std)
    return enc


def build_scene_encoder(cfg: GridGenConfig) -> ResNetEncoder:
    cfg.validate()
    enc = ResNetEncoder(3, cfg.scene_feat_channels, cfg.resnet_blocks, cfg.resnet_filters,
                        cfg.resnet_downsamples, cfg.leaky_slope)
    init_weights(enc, cfg.init_std)
    return enc


class GridGenerator(nn.Module):
    def __init__(self, cfg: GridGenConfig):
        super().__init__()
        self.cfg = cfg
        self.traj_encoder = build_trajectory_encoder(cfg)
        self.scene_encoder = build_scene_encoder(cfg)
        self.cell = ConvLSTMCell(FUSED_CHANNELS, cfg.convlstm_hidden, cfg.convlstm_kernel)
        self.head = nn.Conv2d(cfg.convlstm_hidden, 2, 1)
        init_weights(self.cell, cfg.init_std)
        init_weights(self.head, cfg.init_std)

    def decode(self, traj_feat, scene_feat):
        """Unroll the ConvLSTM for t_f steps on the fused features -> (B, t_f, 2, N, N)."""
        if traj_feat.shape[-2:] != scene_feat.shape[-2:]:
            raise ConfigError("trajectory and scene features differ in spatial size")
        fused = torch.cat([traj_feat, scene_feat], dim=1)
        if fused.shape[1] != FUSED_CHANNELS:
            raise ConfigError(f"fused features have {fused.shape[1]} channels, expected {FUSED_CHANNELS}")
        x_gates = self.cell.input_gates(fused)
        state = self.cell.init_state(fused)
        logits = []
        for _ in range(self.cfg.t_f):
            state = self.cell.step(x_gates, state)
            logits.append(self.head(state[0]))
        return torch.stack(logits, dim=1)

    def forward(self, past, scene):
        return self.decode(self.traj_encoder(past), self.scene_encoder(scene))


def decode_grids(traj_feat, scene_feat, model: GridGenerator):
    return model.decode(traj_feat, scene_feat)


def grid_loss(logits, targets, positive_class_weight: float = 1.0):
    """Mean per-cell two-class cross-entropy, occupied cells weighted.

    ``logits`` (..., 2, N, N) with the class axis third from last;
    ``targets`` (..., N, N) boolean or 0/1.
    """
    logp = F.log_softmax(logits, dim=-3)
    t = targets.to(logp.dtype)
    nll = -(positive_class_weight * t * logp[..., OCCUPIED, :, :] + (1.0 - t) * logp[..., 1 - OCCUPIED, :, :])
    return nll.mean()


def occupancy(logits):
    return F.softmax(logits, dim=-3)[..., OCCUPIED, :, :]


def forward_probabilities(sample, model: GridGenerator) -> np.ndarray:
    """Occupancy probabilities (t_f, N, N) for one GridSample, eval mode."""
    was_training = model.training
    model.eval()
    device = next(model.parameters()).device
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        past = torch.as_tensor(np.asarray(sample.past_grid), dtype=dtype, device=device)[None]
        scene = torch.as_tensor(np.asarray(sample.scene_grid), dtype=dtype, device=device)[None]
        probs = occupancy(model(past, scene))[0]
    model.train(was_training)
    return probs.cpu().numpy()


def pretrain_scene_encoder(encoder: ResNetEncoder, seg_dataset, n_classes: int, steps: int = 200,
                           lr: float = 2e-3, batch_size: int = 8, seed: int = 0,
                           return_head: bool = False):
    """Semantic-segmentation pretraining of ``encoder`` with a throwaway 1x1 head.

    ``seg_dataset`` holds ``(image, class_map)`` pairs: images (3, H, W) in
    [0, 1] (or H x W x 3 uint8) and integer maps (H, W). Returns the encoder,
    or ``(encoder, head)`` with ``return_head`` for inspection.
    """
    if n_classes < 2:
        raise ConfigError("segmentation needs at least two classes")
    images, maps = [], []
    for img, lab in seg_dataset:
        img = np.asarray(img)
        if img.ndim == 3 and img.shape[-1] == 3 and img.shape[0] != 3:
            img = img.transpose(2, 0, 1)
        if img.dtype == np.uint8:
            img = img.astype(np.float32) / 255.0
        lab = np.asarray(lab)
        if img.shape[1:] != lab.shape:
            raise ConfigError(f"label map {lab.shape} does not match image {img.shape[1:]}")
        images.append(img.astype(np.float32))
        maps.append(lab.astype(np.int64))
    dtype = next(encoder.parameters()).dtype
    head = nn.Conv2d(encoder.out_channels, n_classes, 1).to(dtype)
    if steps <= 0 or not images:
        return (encoder, head) if return_head else encoder
    if len({im.shape for im in images}) != 1:
        raise ConfigError("all segmentation images must share one resolution")
    x_all = torch.as_tensor(np.stack(images), dtype=dtype)
    y_all = torch.as_tensor(np.stack(maps))
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(list(encoder.parameters()) + list(head.parameters()), lr=lr, betas=(0.5, 0.999))
    encoder.train()
    for step in range(steps):
        idx = torch.randint(len(x_all), (min(batch_size, len(x_all)),), generator=gen)
        loss = F.cross_entropy(head(encoder(x_all[idx])), y_all[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 50 == 0:
            log.debug("pretrain step %d loss %.4f", step, loss.item())
    encoder.eval()
    return (encoder, head) if return_head else encoder
