import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import GridSettings, OutputSettings, Settings, SweepSettings  # noqa: E402
from model import ParamPoint1D0D, make_1d0d_background  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: large Monte Carlo oracle runs")


@pytest.fixture
def rng():
    return np.random.default_rng(20201019)


@pytest.fixture
def mid_point():
    return ParamPoint1D0D(survival=0.5, collisionality=2.0, pr=0.5)


@pytest.fixture
def mid_background(mid_point):
    return make_1d0d_background(mid_point, 1.0)


@pytest.fixture
def forward_background():
    return make_1d0d_background(ParamPoint1D0D(survival=0.5, collisionality=2.0, pr=1.0), 1.0)


@pytest.fixture
def small_settings(tmp_path):
    """One 1D0D point, desk-sized sample."""
    return Settings(
        sweep=SweepSettings(particles=1000, repetitions=3, threads=1, seed=7),
        grid=GridSettings(survival=[0.5], collisionality=[2.0], pr=[0.5]),
        output=OutputSettings(directory=str(tmp_path / "out")),
    )
