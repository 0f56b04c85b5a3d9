"""Cost and stopping-time estimators.

Three mutually validating routes to the long-run quadratic deviation cost:

* first-interval pair estimator: mean(pair integral) / mean(T),
* first-interval single-agent estimator: N(N-1) * mean(agent-1 integral) / mean(T),
* long-run trajectory estimator: time average over a horizon with resets.

All cost estimates are ratios of means (a mean of per-run ratios would be a
biased estimator of the renewal-reward cost) with delta-method standard
errors using the empirical covariance of the numerator and denominator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backends
from .core import SimGrid
from .rng import LONGRUN_STREAM_BASE, RngStream, fill_normal_block
from .triggering import (
    EventTriggered,
    IntervalBatch,
    StepBudgetExceeded,
    TimeTriggered,
    TriggerScheme,
    _block_schedule,
    _expected_steps,
    period_steps,
    run_interval_batch,
)

# Runs lost to the step budget are excluded and reported; beyond this
# fraction the estimate is flagged invalid.
MAX_FAILED_FRACTION = 1e-3

ESTIMATOR_FIRST_PAIR = "first-interval-pair"
ESTIMATOR_FIRST_SINGLE = "first-interval-single"
ESTIMATOR_LONGRUN = "long-run-trajectory"


@dataclass(frozen=True)
class MomentStats:
    """Mean / second moment / variance of a sampled scalar with errors."""

    mean: float
    mean_stderr: float
    second_moment: float
    variance: float
    var_stderr: float
    n_samples: int


@dataclass(frozen=True)
class CostEstimate:
    """A cost estimate with its standard error and full provenance."""

    j: float
    stderr: float
    estimator: str
    config: dict
    invalid: bool = False


@dataclass(frozen=True)
class FirstIntervalCost:
    """Both first-interval estimates plus the stopping-time moments."""

    pair: CostEstimate
    single: CostEstimate
    exit_moments: MomentStats
    failed_runs: int
    invalid: bool


def pair_deviation_energy(deviations: np.ndarray) -> float:
    """Pairwise quadratic deviation 0.5*sum_ij (d_i - d_j)^2 in O(N).

    Uses the identity 0.5*sum_ij (d_i-d_j)^2 = N*sum(d^2) - (sum d)^2.
    """
    d = np.asarray(deviations, dtype=float)
    n = d.shape[0]
    return float(n * np.dot(d, d) - d.sum() ** 2)


def accumulate_cost(dev_before: np.ndarray, dev_after: np.ndarray, dt: float) -> tuple[float, float]:
    """Trapezoid panel of the two cost integrands over one grid step."""
    dq_pair = 0.5 * dt * (pair_deviation_energy(dev_before) + pair_deviation_energy(dev_after))
    d0 = float(dev_before[0])
    d1 = float(dev_after[0])
    dq_single = 0.5 * dt * (d0 * d0 + d1 * d1)
    return dq_pair, dq_single


def moment_stats(samples: np.ndarray) -> MomentStats:
    """Sample mean / second moment / variance with standard errors."""
    x = np.asarray(samples, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples")
    mean = float(x.mean())
    second = float((x * x).mean())
    var = second - mean * mean
    mean_se = float(x.std(ddof=1) / math.sqrt(n))
    # delta-method error of the variance from the fourth central moment
    c = x - mean
    mu4 = float((c ** 4).mean())
    var_se = math.sqrt(max(mu4 - var * var, 0.0) / n)
    return MomentStats(mean, mean_se, second, var, var_se, n)


def ratio_of_means_stderr(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """Delta-method estimate and stderr of mean(num)/mean(den)."""
    n = num.shape[0]
    nbar = float(num.mean())
    dbar = float(den.mean())
    r = nbar / dbar
    s_nn = float(num.var(ddof=1))
    s_dd = float(den.var(ddof=1))
    s_nd = float(np.cov(num, den, ddof=1)[0, 1])
    var = (s_nn - 2.0 * r * s_nd + r * r * s_dd) / (n * dbar * dbar)
    return r, math.sqrt(max(var, 0.0))


def cost_from_batch(batch: IntervalBatch) -> FirstIntervalCost:
    """First-interval estimates (pair and single forms) from a batch."""
    if batch.n_valid < 2:
        raise StepBudgetExceeded(
            f"only {batch.n_valid} of {batch.runs} runs triggered within the step budget"
        )
    invalid = batch.failed_runs > MAX_FAILED_FRACTION * batch.runs
    config = batch.fingerprint()
    j_pair, se_pair = ratio_of_means_stderr(batch.q_pair, batch.T)
    c = batch.n_agents * (batch.n_agents - 1)
    j_single, se_single = ratio_of_means_stderr(c * batch.q_single, batch.T)
    return FirstIntervalCost(
        pair=CostEstimate(j_pair, se_pair, ESTIMATOR_FIRST_PAIR, config, invalid),
        single=CostEstimate(j_single, se_single, ESTIMATOR_FIRST_SINGLE, config, invalid),
        exit_moments=moment_stats(batch.T),
        failed_runs=batch.failed_runs,
        invalid=invalid,
    )


def estimate_cost_first_interval(
    n_agents: int,
    scheme: TriggerScheme,
    grid: SimGrid,
    runs: int,
    seed: int,
    workers: int = 1,
    backend: str | None = None,
    bridge_correction: bool = False,
) -> FirstIntervalCost:
    """Run a first-interval Monte Carlo batch and estimate the cost."""
    batch = run_interval_batch(
        n_agents, scheme, grid, runs, seed, workers=workers, backend=backend,
        bridge_correction=bridge_correction,
    )
    return cost_from_batch(batch)


def estimate_exit_moments(
    n_agents: int,
    delta: float,
    grid: SimGrid,
    runs: int,
    seed: int,
    workers: int = 1,
    backend: str | None = None,
) -> MomentStats:
    """Moments of the event-triggered stopping time."""
    batch = run_interval_batch(
        n_agents, EventTriggered(delta), grid, runs, seed, workers=workers, backend=backend
    )
    if batch.failed_runs > MAX_FAILED_FRACTION * runs:
        raise StepBudgetExceeded(f"{batch.failed_runs} of {runs} runs exhausted the step budget")
    return moment_stats(batch.T)


_LONGRUN_BATCHES = 20


def estimate_cost_longrun(
    n_agents: int,
    scheme: TriggerScheme,
    grid: SimGrid,
    horizon: float,
    seed: int,
    backend: str | None = None,
    trajectory_index: int = 0,
) -> CostEstimate:
    """Time-averaged pair cost over [0, horizon] with resets at every event.

    One continuing trajectory; the stderr comes from batch means over
    equal-time segments.  Requires the horizon to cover at least 100 events
    so the renewal average has settled.
    """
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    horizon_steps = int(round(horizon / grid.dt))
    if horizon_steps < _LONGRUN_BATCHES:
        raise ValueError("horizon too short for the grid")
    if isinstance(scheme, TimeTriggered):
        m = period_steps(scheme.period, grid.dt)
        threshold = math.inf
        if horizon < 100 * scheme.period:
            raise ValueError("horizon must cover at least 100 periods")
        first_block = m
    else:
        m = 0
        threshold = scheme.threshold
        first_block = int(1.15 * _expected_steps(n_agents, threshold, grid.dt)) + 1

    kernel = backends.interval_kernel(backend)
    stream = RngStream(seed, LONGRUN_STREAM_BASE + trajectory_index)
    gens = stream.agent_generators(n_agents)
    sqrt_dt = math.sqrt(grid.dt)
    dev = np.zeros(n_agents)

    bin_steps = horizon_steps // _LONGRUN_BATCHES
    bin_q = np.zeros(_LONGRUN_BATCHES)
    total_q = 0.0
    n_events = 0
    steps_done = 0
    interval_steps = 0
    schedule = _block_schedule(n_agents, first_block)
    block = next(schedule)
    while steps_done < horizon_steps:
        length = min(block, horizon_steps - steps_done)
        if m > 0:
            length = min(length, m - interval_steps)
        z = np.empty((n_agents, length))
        fill_normal_block(gens, z)
        pair_panels = np.empty(length)
        single_panels = np.empty(length)
        consumed, _agent = kernel(dev, z, sqrt_dt, grid.dt, threshold, pair_panels, single_panels)
        if consumed == 0:
            consumed = length
            triggered = m > 0 and interval_steps + length >= m
        else:
            triggered = True
        total_q += float(pair_panels[:consumed].sum())
        # spread this block's panels over the time bins it overlaps
        lo = steps_done
        hi = steps_done + consumed
        b = min(lo // bin_steps, _LONGRUN_BATCHES - 1)
        while lo < hi:
            edge = (b + 1) * bin_steps if b < _LONGRUN_BATCHES - 1 else horizon_steps
            take = min(hi, edge) - lo
            bin_q[b] += float(pair_panels[lo - steps_done: lo - steps_done + take].sum())
            lo += take
            b = min(b + 1, _LONGRUN_BATCHES - 1)
        steps_done = hi
        interval_steps += consumed
        if triggered:
            dev[:] = 0.0
            n_events += 1
            interval_steps = 0
            schedule = _block_schedule(n_agents, first_block)
            block = next(schedule)
        else:
            block = next(schedule)

    if n_events < 100:
        raise ValueError(f"horizon covered only {n_events} events; need >= 100 for a long-run average")

    j = total_q / (horizon_steps * grid.dt)
    rates = bin_q[:-1] / (bin_steps * grid.dt)  # last bin may be longer, drop it
    stderr = float(rates.std(ddof=1) / math.sqrt(rates.shape[0]))
    config = {
        "n_agents": n_agents,
        "dt": grid.dt,
        "horizon": horizon,
        "seed": seed,
        "events": n_events,
        **({"scheme": "time", "period": scheme.period} if isinstance(scheme, TimeTriggered)
           else {"scheme": "event", "delta": scheme.threshold}),
    }
    return CostEstimate(j, stderr, ESTIMATOR_LONGRUN, config)
