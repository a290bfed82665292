import numpy as np
import pytest

from dorsalhash.network import FixedFilterNet, NetworkConfig


@pytest.fixture(scope="session")
def tiny_config():
    # Smallest legal geometry: keeps unit tests fast while exercising every stage.
    return NetworkConfig(num_classes=3, input_height=16, input_width=32,
                         fc1_dim=96, fc2_dim=128, lbc_seed=7)


@pytest.fixture(scope="session")
def tiny_net(tiny_config):
    return FixedFilterNet.build(tiny_config)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
