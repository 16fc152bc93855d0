"""Grid-based multimodal pedestrian trajectory forecasting.

A grid generator turns past-trajectory and scene grids into per-step
occupancy probabilities; a sampler regresses K trajectories from them.
"""
from .grids import GridGeometry, GridSample, make_sample, rotate_sample
from .metrics import made, mfde
from .models import GridGenConfig, GridGenerator, SamplerConfig, TrajectorySampler

__version__ = "0.1.0"

__all__ = [
    "GridGeometry",
    "GridSample",
    "make_sample",
    "rotate_sample",
    "made",
    "mfde",
    "GridGenConfig",
    "GridGenerator",
    "SamplerConfig",
    "TrajectorySampler",
]
