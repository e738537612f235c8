import numpy as np
import pytest

from felrl.envs import EnvSpec


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training / acceptance test")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0xFE1)


@pytest.fixture
def unit_spec() -> EnvSpec:
    """1-D state, 1-D action in [−1, 1]."""
    return EnvSpec(obs_dim=1, act_dim=1, action_low=np.array([-1.0]), action_high=np.array([1.0]), horizon=10)
