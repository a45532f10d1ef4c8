import numpy as np
import pytest

from jointsearch.cost_model import build_synthetic_table
from jointsearch.oracle import OracleConfig
from jointsearch.space import SearchSpaceConfig, StageConfig, default_space, tiny_space


@pytest.fixture(scope="session")
def space21():
    return default_space()


@pytest.fixture(scope="session")
def tiny():
    return tiny_space()


@pytest.fixture(scope="session")
def two_stage():
    """Small two-stage space used where depth interplay across stages matters."""
    return SearchSpaceConfig(
        (StageConfig((1, 2), 4, feature_hw=8), StageConfig((1,), 8, feature_hw=4)),
        kernel_choices=(3, 5), bit_choices=(4, 8), reference_resolution=32,
    )


@pytest.fixture(scope="session")
def oracle_cfg():
    return OracleConfig()


@pytest.fixture(scope="session")
def tiny_table(tiny):
    return build_synthetic_table(tiny, "synthetic-accel", seed=0)


@pytest.fixture(scope="session")
def table21(space21):
    return build_synthetic_table(space21, "synthetic-accel", seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
