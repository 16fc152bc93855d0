import numpy as np
import pytest
import torch

from gridforecast.dataset import window_samples
from gridforecast.grids import GridGeometry
from gridforecast.synthetic import corridor_spec, generate_synthetic


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def desk_geom():
    return GridGeometry(32, 10.0)


@pytest.fixture(scope="session")
def corridor_samples(desk_geom):
    spec = corridor_spec()
    image, labels, tracks = generate_synthetic(spec, 6, seed=3)
    samples = window_samples(tracks, spec.stride_frames, desk_geom, image, "corridor")
    assert len(samples) >= 8
    return samples


@pytest.fixture(scope="session")
def corridor_world():
    spec = corridor_spec()
    return generate_synthetic(spec, 6, seed=3)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
