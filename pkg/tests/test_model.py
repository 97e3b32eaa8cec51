import math

import numpy as np
import pytest

from noma_ee.errors import ScenarioError
from noma_ee.model import (Beamformers, ChannelModelConfig, SystemScenario, check_feasibility, dbm_to_watts,
                           effective_sinr, generate_channels, metrics, order_users, sinr_matrix,
                           sinr_of_message_at_user, tx_snr_to_power)


def test_unit_conversions():
    assert dbm_to_watts(45.0) == pytest.approx(31.6228, rel=1e-5)
    assert tx_snr_to_power(20.0, 2.0) == pytest.approx(200.0)


def test_sinr_of_message_at_user(two_user_scenario, two_user_beams):
    s, w = two_user_scenario, two_user_beams
    assert sinr_of_message_at_user(s, w, 0, 0) == pytest.approx(1.0)
    assert sinr_of_message_at_user(s, w, 1, 0) == pytest.approx(2.0)
    assert sinr_of_message_at_user(s, w, 1, 1) == pytest.approx(0.8)
    assert effective_sinr(s, w, 1) == pytest.approx(0.8)


def test_sinr_matrix_matches_scalar_version(table_scenario, rng):
    s = table_scenario
    w = Beamformers(rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)))
    matrix = sinr_matrix(s, w)
    for i in range(3):
        for k in range(i + 1):
            assert matrix[k, i] == pytest.approx(sinr_of_message_at_user(s, w, i, k), rel=1e-12)


def test_sinr_index_validation(two_user_scenario, two_user_beams):
    with pytest.raises(ScenarioError):
        sinr_of_message_at_user(two_user_scenario, two_user_beams, 0, 1)


def test_metrics_example(two_user_scenario, two_user_beams):
    m = metrics(two_user_scenario, two_user_beams)
    np.testing.assert_allclose(m.per_user_rate, [1.0, 0.847997], rtol=1e-5)
    assert m.per_user_ee[0] == pytest.approx(0.28261, rel=1e-4)
    assert m.gee == pytest.approx(0.15805, rel=1e-4)
    np.testing.assert_allclose(m.per_user_power, [1.0, 4.0])


def test_metrics_bandwidth_scaling(two_user_scenario, two_user_beams):
    unit = metrics(two_user_scenario, two_user_beams, bandwidth_hz=1.0)
    scaled = metrics(two_user_scenario, two_user_beams, bandwidth_hz=1e6)
    np.testing.assert_allclose(scaled.per_user_ee, 1e6 * unit.per_user_ee)
    assert scaled.gee == pytest.approx(1e6 * unit.gee)


def test_zero_power_has_zero_rate(two_user_scenario):
    m = metrics(two_user_scenario, Beamformers.zeros(2, 2))
    np.testing.assert_allclose(m.per_user_rate, 0.0)
    np.testing.assert_allclose(m.per_user_ee, 0.0)


def test_check_feasibility_example(two_user_scenario, two_user_beams):
    report = check_feasibility(two_user_scenario, two_user_beams)
    assert report.ok
    assert report.margins['sic'] == pytest.approx(0.75)
    assert report.margins['power'] == pytest.approx(5.0)


def test_check_feasibility_boundaries():
    s = SystemScenario.uniform(channels=[[1.0, 0.0], [1.0, 0.0]], noise_var=1.0, p_available=2.0,
                               sinr_threshold=0.0)
    w = Beamformers([[1.0, 0.0], [1.0, 0.0]])
    report = check_feasibility(s, w, tol=0.0)
    assert report.sic_ok and report.power_ok

    over = check_feasibility(s, Beamformers([[1.0, 0.0], [1.1, 0.0]]), tol=0.0)
    assert not over.power_ok

    reversed_order = check_feasibility(s, Beamformers([[1.0, 0.0], [0.5, 0.0]]), tol=0.0)
    assert not reversed_order.sic_ok


def test_rate_floor_violation(two_user_scenario):
    tiny = Beamformers([[1e-3, 0.0], [2e-3, 0.0]])
    report = check_feasibility(two_user_scenario, tiny)
    assert not report.rate_ok
    assert report.margins['rate'] < 0


def test_generate_channels_is_deterministic():
    cfg = ChannelModelConfig(distances_m=[1.0, 5.5, 25.0], path_loss_exp=2.0, rng_seed=42)
    a = generate_channels(cfg, 3)
    b = generate_channels(cfg, 3)
    assert a.shape == (3, 3)
    np.testing.assert_array_equal(a, b)
    other = generate_channels(cfg.model_copy(update={'rng_seed': 43}), 3)
    assert not np.array_equal(a, other)


def test_generate_channels_path_loss_scale():
    cfg = ChannelModelConfig(distances_m=[5.0] * 4000, path_loss_exp=2.0, rng_seed=3)
    h = generate_channels(cfg, 1)
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0 / 25.0, rel=0.08)


def test_zero_path_loss_means_unit_scale():
    cfg = ChannelModelConfig(distances_m=[3.0] * 4000, path_loss_exp=0.0, rng_seed=5)
    h = generate_channels(cfg, 1)
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, rel=0.08)


def test_channel_config_validation():
    with pytest.raises(ValueError):
        ChannelModelConfig(distances_m=[1.0, -2.0])
    with pytest.raises(ValueError):
        ChannelModelConfig(distances_m=[1.0], rng_seed=-1)


def test_order_users():
    channels = np.array([[0.1], [2.0], [1.0], [2.0]])
    ordered, perm = order_users(channels)
    np.testing.assert_array_equal(perm, [1, 3, 2, 0])
    np.testing.assert_array_equal(ordered[:, 0], [2.0, 2.0, 1.0, 0.1])


def test_scenario_ordered_permutes_all_fields():
    s = SystemScenario(channels=[[0.5], [1.0]], noise_vars=[1.0, 2.0], p_available=1.0, amp_efficiency=0.5,
                       power_loss_per_user=[3.0, 4.0], bandwidth_hz=1.0, sinr_thresholds=[0.1, 0.2])
    assert not s.is_ordered
    ordered, perm = s.ordered()
    assert ordered.is_ordered
    np.testing.assert_array_equal(perm, [1, 0])
    np.testing.assert_array_equal(ordered.noise_vars, [2.0, 1.0])
    np.testing.assert_array_equal(ordered.power_loss_per_user, [4.0, 3.0])
    np.testing.assert_array_equal(ordered.sinr_thresholds, [0.2, 0.1])


@pytest.mark.parametrize('kwargs', [
    {'noise_var': 0.0},
    {'p_available': -1.0},
    {'amp_efficiency': 1.5},
    {'power_loss': -1.0},
    {'sinr_threshold': -0.1},
])
def test_scenario_validation(kwargs):
    base = dict(channels=[[1.0]], noise_var=1.0, p_available=1.0)
    base.update(kwargs)
    with pytest.raises(ScenarioError):
        SystemScenario.uniform(**base)


def test_scenario_arrays_are_read_only(two_user_scenario, two_user_beams):
    with pytest.raises(ValueError):
        two_user_scenario.channels[0, 0] = 3.0
    with pytest.raises(ValueError):
        two_user_beams.vectors[0, 0] = 3.0


def test_min_rates_derived_from_thresholds(two_user_scenario):
    np.testing.assert_allclose(two_user_scenario.min_rates, math.log2(1.001))
