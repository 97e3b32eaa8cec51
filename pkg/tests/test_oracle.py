import math

import numpy as np
import pytest
from pydantic import ValidationError

from noma_ee.errors import NoFeasiblePoint, ScenarioError
from noma_ee.model import Beamformers, SystemScenario, check_feasibility, metrics
from noma_ee.oracle import (GridSpec, Objective, batch_evaluate, grid_optimize, pf_condition_check,
                            pf_condition_lhs, sample_beamformers, single_user_ee_max)

K1_OPTIMUM = 1.0 / (math.e * math.log(2.0))


def test_grid_spec_validation():
    with pytest.raises(ValidationError):
        GridSpec(power_steps=1)
    with pytest.raises(ValidationError):
        GridSpec(power_min=2.0, power_max=1.0)
    refined = GridSpec(power_steps=5, angle_steps=3).refined()
    assert (refined.power_steps, refined.angle_steps) == (9, 5)


def test_refined_grid_is_superset(scalar_two_user):
    coarse = GridSpec(power_steps=11)
    powers, _ = coarse.axes(scalar_two_user)
    fine, _ = coarse.refined().axes(scalar_two_user)
    np.testing.assert_allclose(fine[::2], powers)


def test_golden_section_single_user(single_user):
    p, ee = single_user_ee_max(single_user)
    assert p == pytest.approx(math.e - 1.0, rel=1e-6)
    assert ee == pytest.approx(K1_OPTIMUM, rel=1e-9)


def test_single_user_grid_matches_golden_section(single_user):
    result = grid_optimize(single_user, Objective.MIN_EE, GridSpec(power_steps=100_001))
    _, ee = single_user_ee_max(single_user)
    assert result.value == pytest.approx(ee, abs=1e-6)
    assert result.cell_variation < 1e-6


def test_objectives_coincide_for_single_user(single_user):
    grid = GridSpec(power_steps=2001)
    min_ee = grid_optimize(single_user, Objective.MIN_EE, grid).value
    gee = grid_optimize(single_user, Objective.GEE, grid).value
    log_ee = grid_optimize(single_user, Objective.SUM_LOG_EE, grid).value
    assert gee == pytest.approx(min_ee)
    assert log_ee == pytest.approx(math.log2(min_ee))


@pytest.mark.parametrize('objective', list(Objective))
def test_grid_result_is_feasible_and_chunk_independent(scalar_two_user, objective):
    grid = GridSpec(power_steps=120)
    whole = grid_optimize(scalar_two_user, objective, grid)
    chunked = grid_optimize(scalar_two_user, objective, grid, chunk_size=997)
    assert chunked.value == whole.value
    np.testing.assert_array_equal(chunked.w.vectors, whole.w.vectors)
    assert check_feasibility(scalar_two_user, whole.w, tol=1e-9).ok
    assert whole.feasible <= whole.evaluated


def test_refining_never_decreases_optimum(scalar_two_user):
    grid = GridSpec(power_steps=60)
    coarse = grid_optimize(scalar_two_user, Objective.MIN_EE, grid)
    fine = grid_optimize(scalar_two_user, Objective.MIN_EE, grid.refined())
    assert fine.value >= coarse.value - 1e-12


def test_scalar_grid_prunes_power_order(scalar_two_user):
    result = grid_optimize(scalar_two_user, Objective.GEE, GridSpec(power_steps=50))
    # 只保留 p_1 <= p_2 的组合
    assert result.evaluated == 50 * 51 // 2
    powers = result.w.powers
    assert powers[1] >= powers[0]


def test_real_two_antenna_grid():
    s = SystemScenario.uniform(channels=[[1.0, 0.3], [0.2, -0.6]], noise_var=1.0, p_available=4.0,
                               amp_efficiency=1.0, power_loss=1.0)
    result = grid_optimize(s, Objective.MIN_EE, GridSpec(power_steps=30, angle_steps=17))
    assert result.evaluated == (30 * 17) ** 2
    assert check_feasibility(s, result.w, tol=1e-9).ok
    assert result.value == pytest.approx(metrics(s, result.w, bandwidth_hz=1.0).min_ee)


def test_unsupported_instances():
    complex_two = SystemScenario.uniform(channels=[[1.0, 0.5j]], noise_var=1.0, p_available=1.0)
    with pytest.raises(ScenarioError):
        grid_optimize(complex_two, Objective.MIN_EE)
    three_antennas = SystemScenario.uniform(channels=[[1.0, 0.0, 0.0]], noise_var=1.0, p_available=1.0)
    with pytest.raises(ScenarioError):
        grid_optimize(three_antennas, Objective.MIN_EE)
    four_users = SystemScenario.uniform(channels=[[4.0], [3.0], [2.0], [1.0]], noise_var=1.0, p_available=1.0)
    with pytest.raises(ScenarioError):
        grid_optimize(four_users, Objective.MIN_EE)


def test_grid_size_limit(scalar_two_user):
    with pytest.raises(ValueError):
        grid_optimize(scalar_two_user, Objective.MIN_EE, GridSpec(power_steps=5000))


def test_zero_budget_has_no_feasible_point(scalar_two_user):
    with pytest.raises(NoFeasiblePoint):
        grid_optimize(scalar_two_user.with_power(0.0), Objective.MIN_EE, GridSpec(power_steps=10))


def test_batch_evaluate_matches_model(table_scenario, rng):
    W = rng.standard_normal((16, 3, 3)) + 1j * rng.standard_normal((16, 3, 3))
    evaluation = batch_evaluate(table_scenario, W)
    for m in range(len(W)):
        w = Beamformers(W[m])
        exact = metrics(table_scenario, w, bandwidth_hz=1.0)
        np.testing.assert_allclose(evaluation['ee'][m], exact.per_user_ee, rtol=1e-10)
        assert evaluation['gee'][m] == pytest.approx(exact.gee, rel=1e-10)
        assert bool(evaluation['feasible'][m]) == check_feasibility(table_scenario, w, tol=0.0).ok


def test_pf_condition_lhs_examples():
    assert pf_condition_lhs([1.0, 3.0], [2.0, 2.0]) == pytest.approx(0.0)
    assert pf_condition_lhs([3.0, 3.0], [2.0, 2.0]) == pytest.approx(1.0)
    assert pf_condition_lhs([2.0, 2.0], [2.0, 2.0]) == 0.0
    np.testing.assert_allclose(pf_condition_lhs(np.array([[1.0, 3.0], [3.0, 3.0]]), [2.0, 2.0]), [0.0, 1.0])


def test_sampled_scalar_beams_are_feasible(scalar_two_user, rng):
    W = sample_beamformers(scalar_two_user, 500, rng)
    evaluation = batch_evaluate(scalar_two_user, W, tol=1e-12)
    assert np.all(np.sum(np.abs(W) ** 2, axis=(1, 2)) <= scalar_two_user.p_available + 1e-12)
    # 功率升序分配后 SIC 顺序自动满足，只剩速率门限可能不满足
    gains = np.abs(W[:, :, 0]) ** 2
    assert np.all(gains[:, 1] >= gains[:, 0])
    assert evaluation['feasible'].mean() > 0.5


def test_pf_condition_flags_dominated_reference(scalar_two_user):
    state_ee = [1e-6, 1e-6]
    report = pf_condition_check(scalar_two_user, state_ee, trials=200, rng_seed=3)
    assert report.violated
    assert report.n_feasible == 200


def test_pf_condition_accepts_unreachable_reference(scalar_two_user):
    report = pf_condition_check(scalar_two_user, [100.0, 100.0], trials=200, rng_seed=3)
    assert not report.violated
    assert report.max_lhs < 0


def test_pf_condition_requires_positive_reference(scalar_two_user):
    with pytest.raises(ValueError):
        pf_condition_check(scalar_two_user, [0.0, 1.0], trials=10)
