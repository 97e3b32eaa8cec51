import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from noma_ee.model import Beamformers, SystemScenario  # noqa: E402


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='运行蒙特卡洛验收测试')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='需要 --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def two_user_scenario():
    """h1=[1,0], h2=[0.5,0]，sigma^2=1，eps0=0.65，P_l=2 W"""
    return SystemScenario.uniform(channels=[[1.0, 0.0], [0.5, 0.0]], noise_var=1.0, p_available=10.0,
                                  amp_efficiency=0.65, power_loss=2.0, sinr_threshold=1e-3)


@pytest.fixture
def two_user_beams():
    return Beamformers([[1.0, 0.0], [2.0, 0.0]])


@pytest.fixture
def scalar_two_user():
    """K=2, N=1, h=[1, 0.5]"""
    return SystemScenario.uniform(channels=[[1.0], [0.5]], noise_var=1.0, p_available=4.0,
                                  amp_efficiency=1.0, power_loss=1.0, sinr_threshold=1e-3)


@pytest.fixture
def single_user():
    """K=1 最优点 p = e - 1，EE = 1 / (e ln2)"""
    return SystemScenario.uniform(channels=[[1.0]], noise_var=1.0, p_available=10.0,
                                  amp_efficiency=1.0, power_loss=1.0, sinr_threshold=1e-3)


def random_scenario(seed: int, k: int = 3, n: int = 3, tx_snr_db: float = 20.0,
                    distances=(1.0, 5.5, 25.0), power_loss: float = 31.6227766,
                    noise_var: float = 2.0) -> SystemScenario:
    """默认参数下的随机场景（已排序）"""
    from noma_ee.model import ChannelModelConfig, generate_channels, tx_snr_to_power
    cfg = ChannelModelConfig(distances_m=list(distances[:k]), path_loss_exp=2.0, rng_seed=seed)
    channels = generate_channels(cfg, n)
    s = SystemScenario.uniform(channels=channels, noise_var=noise_var,
                               p_available=tx_snr_to_power(tx_snr_db, noise_var),
                               amp_efficiency=0.65, power_loss=power_loss, sinr_threshold=1e-3)
    return s.ordered()[0]


@pytest.fixture
def table_scenario():
    return random_scenario(7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
