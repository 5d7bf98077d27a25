import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from lib.gmnse_integration.dynamics import GmnseParams  # noqa: E402
from lib.gmnse_integration.spectral_core import TorusDomain, random_field  # noqa: E402
from lib.models.config_model import ExperimentConfig  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def domain2d():
    return TorusDomain(resolution_per_axis=16, dimension=2)


@pytest.fixture
def domain3d():
    return TorusDomain(resolution_per_axis=8, dimension=3)


def small_config(**sections) -> ExperimentConfig:
    """2D M=16 config with the first-shell forcing; sections override defaults"""
    data = {"params": {"resolution": 16, "dimension": 2, "dt": 1e-3}}
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return ExperimentConfig.from_dict(data)


@pytest.fixture
def forced2d():
    """nu=1, N=10, first-shell forcing on the 2D 2 pi torus, dt=1e-3"""
    return small_config().build_params()


@pytest.fixture
def unforced2d(domain2d):
    return GmnseParams.unforced(domain2d, nu=1.0, n_cap=10.0, dt=1e-3)


@pytest.fixture
def field2d(domain2d):
    return random_field(domain2d, np.random.default_rng(7), h_norm=1.0)
