"""INI-style run configuration: ``[grid]``, ``[gridgen]``, ``[sampler]``, ``[train]``.

Values are Python literals (``128``, ``(11, 11)``, ``true``). Flag overrides
use ``section.key=value``.
"""
from __future__ import annotations

import ast
import configparser
import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .models.gridgen import GridGenConfig, desk_config
from .models.sampler import SamplerConfig, desk_sampler_config
from .training import TrainConfig

RUNS_ENV = "GRIDFORECAST_RUNS"


@dataclass
class GridConfig:
    n: int = 128
    scale: float = 10.0
    t_h: int = 8
    t_f: int = 12
    stride_frames: int = 12


@dataclass
class RunConfig:
    grid: GridConfig
    gridgen: GridGenConfig
    sampler: SamplerConfig
    train: TrainConfig

    def as_sections(self) -> dict[str, dict]:
        return {name: dataclasses.asdict(getattr(self, name)) for name in ("grid", "gridgen", "sampler", "train")}


PROFILES = ("paper", "desk")


def _literal(text: str):
    low = text.strip().lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(text.strip())
    except (ValueError, SyntaxError):
        return text.strip()


def parse_overrides(items) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for item in items or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        key, value = item.split("=", 1)
        section, name = key.split(".", 1)
        out.setdefault(section.strip(), {})[name.strip()] = _literal(value)
    return out


def read_ini(path) -> dict[str, dict]:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    return {s: {k: _literal(v) for k, v in parser.items(s)} for s in parser.sections()}


def _build(cls, base, values: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")
    merged = dataclasses.asdict(base)
    merged.update(values)
    try:
        return cls(**merged)
    except TypeError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def load_config(path=None, overrides=None, profile: str | None = None) -> RunConfig:
    """Defaults < profile < config file < overrides.

    ``profile`` ``paper`` keeps the published sizes (N=128, 11x11 kernels);
    ``desk`` shrinks the grid and widths for CPU-scale runs and trains with
    lr 1e-3 and a relaxed best-of-K sampler loss. The file may
    set it with ``[run] profile = desk``.
    """
    sections = read_ini(path) if path else {}
    for section, values in parse_overrides(overrides).items():
        sections.setdefault(section, {}).update(values)
    sections.pop("command", None)  # present in config echoes
    run = sections.pop("run", {})
    profile = profile or run.get("profile", "paper")
    if profile not in PROFILES:
        raise ConfigError(f"profile must be one of {PROFILES}, got {profile!r}")
    unknown = set(sections) - {"grid", "gridgen", "sampler", "train"}
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
    if profile == "desk":
        grid0, gg0, sm0 = GridConfig(n=32), desk_config(), desk_sampler_config()
        train0 = TrainConfig(learning_rate=1e-3, variety_relax=0.2)
    else:
        grid0, gg0, sm0 = GridConfig(), GridGenConfig(), SamplerConfig()
        train0 = TrainConfig()
    grid = _build(GridConfig, grid0, sections.get("grid", {}), "grid")
    # grid-level sizes propagate unless a model section sets them explicitly
    shared = {"n": grid.n, "t_h": grid.t_h, "t_f": grid.t_f}
    gg_vals = {**shared, **sections.get("gridgen", {})}
    sm_vals = {"n": grid.n, "t_f": grid.t_f, **sections.get("sampler", {})}
    gridgen = _build(GridGenConfig, gg0, gg_vals, "gridgen")
    sampler = _build(SamplerConfig, sm0, sm_vals, "sampler")
    train = _build(TrainConfig, train0, sections.get("train", {}), "train")
    if gridgen.n != grid.n or sampler.n != grid.n or sampler.t_f != gridgen.t_f:
        raise ConfigError("grid, gridgen and sampler sizes disagree")
    return RunConfig(grid, gridgen, sampler, train)


def write_config_echo(path, cfg: RunConfig | None = None, command: dict | None = None, extra=None):
    """Write every resolved setting (plus the invoking command) as INI."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if command:
        parser["command"] = {k: repr(v) for k, v in command.items()}
    if cfg is not None:
        for name, values in cfg.as_sections().items():
            parser[name] = {k: repr(v) for k, v in values.items()}
    for name, values in (extra or {}).items():
        parser[name] = {k: repr(v) for k, v in values.items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        parser.write(fh)
    return path


def resolve_run_dir(path) -> Path:
    """Relative run directories live under ``$GRIDFORECAST_RUNS`` when it is set."""
    path = Path(path)
    root = os.environ.get(RUNS_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path
