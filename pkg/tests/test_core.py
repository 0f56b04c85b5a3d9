import math
from statistics import NormalDist

import numpy as np
import pytest

from triggersim.core import EnsembleState, SimGrid, reset_to_consensus, step_deviations, step_ensemble
from triggersim.rng import RngStream, StreamPool

# chi-square 1% critical value for 49 degrees of freedom
_CHI2_49_99 = 74.919


def test_grid_defaults_match_protocol():
    grid = SimGrid()
    assert grid.dt == 1e-4
    assert grid.max_steps == 10_000_000


@pytest.mark.parametrize("kwargs", [{"dt": 0.0}, {"dt": -1e-4}, {"max_steps": 0}])
def test_grid_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        SimGrid(**kwargs)


def test_state_validates_shape():
    with pytest.raises(ValueError):
        EnsembleState(n_agents=3, deviations=np.zeros(2))
    with pytest.raises(ValueError):
        EnsembleState(n_agents=0, deviations=np.zeros(0))


def test_consensus_state_is_zero():
    state = EnsembleState.at_consensus(4)
    assert state.deviations.shape == (4,)
    assert not state.deviations.any()
    assert state.t_since_event == 0.0


def test_zero_step_is_identity():
    dev = np.array([0.3, -0.2])
    out = step_deviations(dev, 0.0, np.array([5.0, -7.0]))
    assert np.array_equal(out, dev)


def test_step_ensemble_same_stream_is_bitwise_identical():
    grid = SimGrid(dt=1e-3)
    state = EnsembleState.at_consensus(3)
    a = step_ensemble(state, grid, RngStream(11, 0))
    b = step_ensemble(state, grid, RngStream(11, 0))
    assert np.array_equal(a.deviations, b.deviations)
    assert a.t_since_event == b.t_since_event == 1e-3
    assert a.steps_since_event == 1


def test_elapsed_time_is_step_count_times_dt():
    grid = SimGrid(dt=1e-4)
    state = EnsembleState.at_consensus(1)
    gens = RngStream(3, 0).agent_generators(1)
    for _ in range(1000):
        state = step_ensemble(state, grid, gens)
    assert state.steps_since_event == 1000
    assert state.t_since_event == 1000 * 1e-4 == 0.1


@pytest.mark.parametrize(
    "deviations", [np.array([0.2, -0.1, 0.5]), np.zeros(3), np.array([1.7])]
)
def test_reset_zeroes_everything(deviations):
    state = EnsembleState(len(deviations), deviations, t_since_event=0.4, steps_since_event=4)
    reset = reset_to_consensus(state)
    assert not reset.deviations.any()
    assert reset.t_since_event == 0.0
    assert reset.steps_since_event == 0
    # idempotent
    again = reset_to_consensus(reset)
    assert not again.deviations.any()


def test_deviation_variance_grows_like_time():
    # Var[deviation(t)] = t; 1000 replicas stepped through the low-level op
    dt = 1e-4
    steps = 2000
    gens = RngStream(17, 0).agent_generators(1)
    dev = np.zeros(1000)
    for k in range(steps):
        z = gens[0].standard_normal(1000)
        dev = step_deviations(dev, dt, z)
    t = steps * dt
    var = dev.var(ddof=1)
    stderr = var * math.sqrt(2.0 / (dev.size - 1))
    assert abs(var - t) < 3 * stderr


def test_agent_exchangeability():
    # permuting agent stream indices permutes the deviations identically
    grid = SimGrid(dt=1e-3)
    gens = RngStream(23, 0).agent_generators(4)
    state = step_ensemble(EnsembleState.at_consensus(4), grid, gens)
    perm = [2, 0, 3, 1]
    permuted_gens = [RngStream(23, 0).agent_generators(4)[j] for j in perm]
    permuted = step_ensemble(EnsembleState.at_consensus(4), grid, permuted_gens)
    assert np.array_equal(permuted.deviations, state.deviations[perm])


def test_pooled_increments_pass_chi_square():
    # increments / sqrt(dt) are standard normal: 50 equiprobable bins,
    # 1e5 pooled samples across runs and agents, 1% significance
    pool = StreamPool()
    samples = []
    for run in range(5):
        for gen in pool.seat(31, run, 4):
            samples.append(gen.standard_normal(5000))
    z = np.concatenate(samples)
    assert z.size == 100_000
    nd = NormalDist()
    edges = [nd.inv_cdf(k / 50) for k in range(1, 50)]
    counts, _ = np.histogram(z, bins=[-np.inf, *edges, np.inf])
    expected = z.size / 50
    stat = float(((counts - expected) ** 2 / expected).sum())
    assert stat < _CHI2_49_99
