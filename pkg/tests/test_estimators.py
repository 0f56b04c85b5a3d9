import math

import numpy as np
import pytest

from triggersim.core import SimGrid
from triggersim.estimators import (
    ESTIMATOR_FIRST_PAIR,
    ESTIMATOR_FIRST_SINGLE,
    ESTIMATOR_LONGRUN,
    accumulate_cost,
    cost_from_batch,
    estimate_cost_first_interval,
    estimate_cost_longrun,
    estimate_exit_moments,
    moment_stats,
    pair_deviation_energy,
    ratio_of_means_stderr,
)
from triggersim.rng import RngStream
from triggersim.triggering import EventTriggered, StepBudgetExceeded, TimeTriggered, run_interval_batch


def test_zero_deviations_accumulate_nothing():
    dq_pair, dq_single = accumulate_cost(np.zeros(4), np.zeros(4), 0.01)
    assert dq_pair == 0.0
    assert dq_single == 0.0


def test_constant_pair_panel_value():
    # N=2, deviations (1, -1): integrand 0.5 * ((2)^2 + (-2)^2) = 4
    d = np.array([1.0, -1.0])
    dq_pair, dq_single = accumulate_cost(d, d, 0.01)
    assert dq_pair == 0.04
    assert dq_single == 0.01


def test_pair_energy_identity_matches_double_sum():
    rng = RngStream(21, 0).agent_generators(1)[0]
    for n in (2, 3, 17, 72):
        d = rng.standard_normal(n)
        direct = 0.5 * ((d[:, None] - d[None, :]) ** 2).sum()
        fast = pair_deviation_energy(d)
        assert fast == pytest.approx(direct, rel=1e-12)


def test_single_agent_has_no_pair_cost():
    assert pair_deviation_energy(np.array([1.7])) == 0.0


def test_moment_stats_invariants():
    x = RngStream(4, 0).agent_generators(1)[0].standard_normal(5000) + 2.0
    ms = moment_stats(x)
    assert ms.n_samples == 5000
    assert ms.variance == pytest.approx(ms.second_moment - ms.mean**2, abs=1e-12 * ms.second_moment)
    assert ms.variance >= 0.0
    assert ms.mean_stderr == pytest.approx(x.std(ddof=1) / math.sqrt(5000))


def test_ratio_of_means_on_constants():
    num = np.full(50, 3.0)
    den = np.full(50, 2.0)
    r, se = ratio_of_means_stderr(num, den)
    assert r == 1.5
    assert se == 0.0


def test_time_triggered_cost_matches_closed_form():
    # mean pair cost over one period is N(N-1) P^2/2, so J = N(N-1) P/2
    grid = SimGrid(dt=1e-3)
    n, p = 3, 0.1
    est = estimate_cost_first_interval(n, TimeTriggered(p), grid, runs=3000, seed=5)
    target = n * (n - 1) * p / 2
    assert abs(est.pair.j - target) < 3 * est.pair.stderr
    assert est.pair.estimator == ESTIMATOR_FIRST_PAIR
    assert est.failed_runs == 0


def test_single_agent_cost_is_zero_but_ratio_matches_oracle():
    # the pair cost vanishes for one agent while the raw integral over the
    # exit time has mean delta^4/6 (exit-problem oracle), here ~1/6
    grid = SimGrid(dt=1e-3)
    batch = run_interval_batch(1, EventTriggered(1.0), grid, 4000, seed=6)
    est = cost_from_batch(batch)
    assert est.pair.j == 0.0
    assert est.single.j == 0.0
    ratio = batch.q_single.mean() / batch.T.mean()
    se = batch.q_single.std(ddof=1) / math.sqrt(batch.n_valid) / batch.T.mean()
    # 5% slack absorbs the coarse-grid monitoring bias at dt=1e-3
    assert abs(ratio - 1.0 / 6.0) < 3 * se + 0.05 / 6.0


def test_pair_and_single_estimators_agree():
    grid = SimGrid(dt=1e-3)
    est = estimate_cost_first_interval(2, EventTriggered(1.0), grid, runs=4000, seed=7)
    comb = math.hypot(est.pair.stderr, est.single.stderr)
    assert abs(est.pair.j - est.single.j) <= 3 * comb
    assert est.single.estimator == ESTIMATOR_FIRST_SINGLE


def test_longrun_matches_time_triggered_closed_form():
    grid = SimGrid(dt=1e-3)
    est = estimate_cost_longrun(2, TimeTriggered(0.1), grid, horizon=1000.0, seed=8)
    assert est.estimator == ESTIMATOR_LONGRUN
    assert est.config["events"] == 10000
    assert abs(est.j - 0.1) < 0.05 * 0.1
    assert abs(est.j - 0.1) < 5 * est.stderr


def test_longrun_horizon_exact_multiple_of_period():
    grid = SimGrid(dt=1e-3)
    est = estimate_cost_longrun(2, TimeTriggered(0.2), grid, horizon=100 * 0.2, seed=9)
    assert abs(est.j - 0.2) < 5 * est.stderr


def test_longrun_agrees_with_first_interval():
    grid = SimGrid(dt=1e-3)
    first = estimate_cost_first_interval(2, EventTriggered(1.0), grid, runs=4000, seed=10)
    long = estimate_cost_longrun(2, EventTriggered(1.0), grid, horizon=400.0, seed=10)
    comb = math.hypot(first.pair.stderr, long.stderr)
    assert abs(first.pair.j - long.j) <= 3 * comb


def test_longrun_requires_enough_events():
    grid = SimGrid(dt=1e-3)
    with pytest.raises(ValueError):
        estimate_cost_longrun(2, TimeTriggered(0.1), grid, horizon=5.0, seed=0)
    with pytest.raises(ValueError):
        estimate_cost_longrun(1, EventTriggered(1.0), grid, horizon=20.0, seed=0)


def test_exit_moments_match_exit_problem_oracles():
    # E[T] = 1 and Var[T] = 2/3 for the unit threshold (ODE oracles); the
    # coarse dt=1e-3 grid inflates both by ~2-4%, kept inside the window
    grid = SimGrid(dt=1e-3)
    ms = estimate_exit_moments(1, 1.0, grid, runs=4000, seed=11)
    assert abs(ms.mean - 1.0) < 3 * ms.mean_stderr + 0.05
    assert abs(ms.variance - 2.0 / 3.0) < 3 * ms.var_stderr + 0.04
    assert ms.n_samples == 4000


def test_exit_moments_scale_with_threshold_squared():
    grid = SimGrid(dt=1e-3)
    base = estimate_exit_moments(1, 1.0, grid, runs=1500, seed=12)
    quarter = estimate_exit_moments(1, 0.5, SimGrid(dt=0.25e-3), runs=1500, seed=12)
    assert quarter.mean == pytest.approx(0.25 * base.mean, rel=1e-12)
    assert quarter.variance == pytest.approx(0.25**2 * base.variance, rel=1e-11)


def test_exit_moments_monotone_in_ensemble_size():
    grid = SimGrid(dt=1e-3)
    small = estimate_exit_moments(12, 1.0, grid, runs=800, seed=13)
    large = estimate_exit_moments(72, 1.0, grid, runs=800, seed=13)
    assert large.mean < small.mean


def test_excessive_failures_raise_and_flag():
    # budget of 0.8s lets roughly half of the unit-threshold runs trigger
    grid = SimGrid(dt=1e-3, max_steps=800)
    with pytest.raises(StepBudgetExceeded):
        estimate_exit_moments(1, 1.0, grid, runs=200, seed=14)
    batch = run_interval_batch(1, EventTriggered(1.0), grid, 200, seed=14)
    assert 0 < batch.failed_runs < 200
    est = cost_from_batch(batch)
    assert est.invalid
    assert est.failed_runs == 200 - batch.n_valid
    with pytest.raises(StepBudgetExceeded):
        cost_from_batch(run_interval_batch(1, EventTriggered(1.0), SimGrid(dt=1e-3, max_steps=5),
                                           200, seed=14))


def test_cost_estimate_carries_fingerprint():
    grid = SimGrid(dt=1e-3)
    est = estimate_cost_first_interval(2, EventTriggered(1.0), grid, runs=100, seed=15)
    fp = est.pair.config
    assert fp["n_agents"] == 2
    assert fp["dt"] == 1e-3
    assert fp["runs"] == 100
    assert fp["seed"] == 15
    assert fp["scheme"] == "event"
