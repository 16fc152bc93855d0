"""Self-describing checkpoint container: config echo + named tensors + version tag."""
from __future__ import annotations

import dataclasses
from pathlib import Path

import torch

from .errors import ConfigError
from .models.gridgen import GridGenConfig, GridGenerator, build_scene_encoder
from .models.sampler import SamplerConfig, TrajectorySampler

FORMAT = "gridforecast-checkpoint"
VERSION = 1
SECTIONS = ("gridgen", "sampler", "scene_encoder")


def _section_of(model) -> str:
    if isinstance(model, GridGenerator):
        return "gridgen"
    if isinstance(model, TrajectorySampler):
        return "sampler"
    return "scene_encoder"


def save_checkpoint(path, model, config=None, extra: dict | None = None, section: str | None = None):
    section = section or _section_of(model)
    if section not in SECTIONS:
        raise ConfigError(f"unknown checkpoint section {section!r}")
    config = config if config is not None else getattr(model, "cfg", None)
    if config is None:
        raise ConfigError("a config echo is required to write a checkpoint")
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "section": section,
        "config": dataclasses.asdict(config),
        "state_dict": {k: v.detach().cpu().clone() for k, v in model.state_dict().items()},
        "extra": dict(extra or {}),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise ConfigError(f"{path} is not a {FORMAT} file")
    if payload.get("version") != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    return payload


def load_checkpoint(path, section: str | None = None):
    """Rebuild the model stored at ``path``; returns ``(model, payload)``."""
    payload = read_checkpoint(path)
    if section is not None and payload["section"] != section:
        raise ConfigError(f"{path} holds a {payload['section']!r} checkpoint, expected {section!r}")
    kind = payload["section"]
    if kind == "gridgen":
        model = GridGenerator(GridGenConfig.from_dict(payload["config"]))
    elif kind == "sampler":
        model = TrajectorySampler(SamplerConfig.from_dict(payload["config"]))
    else:
        model = build_scene_encoder(GridGenConfig.from_dict(payload["config"]))
    state = payload["state_dict"]
    floats = [v.dtype for v in state.values() if v.dtype.is_floating_point]
    if floats:
        model = model.to(floats[0])
    model.load_state_dict(state)
    model.eval()
    return model, payload
