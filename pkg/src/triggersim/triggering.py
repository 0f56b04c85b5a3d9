"""Triggering schemes, stopping-time detection, and interval simulation.

An inter-event interval starts from consensus and runs until the scheme
fires: time-triggered fires after a fixed period, event-triggered fires at
the first grid point where any agent's deviation magnitude reaches the
threshold.  Every event resets the whole ensemble, so the deviation since
the last global event is exactly the quantity each agent monitors.

Crossing detection uses >= at grid points (equality is reachable in floating
point) and reports the lowest agent index when several agents cross in the
same step; the cost is unaffected by that choice.  Time-triggered periods
are snapped to a whole number of grid steps so the stopping time is exact.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass

import numpy as np

from . import backends
from .core import EnsembleState, SimGrid, step_ensemble
from .rng import RngStream, StreamPool, fill_normal_block

# Block schedule constants.  The schedule is a pure function of
# (n_agents, dt, scheme), never of worker count or backend, so trajectories
# are reproducible under any parallel split.
_BLOCK_ELEMS_CAP = 1 << 22
_BLOCK_GROWTH = 2


class StepBudgetExceeded(RuntimeError):
    """An interval exhausted its step budget without triggering.

    Affected runs must be reported and excluded, never truncated: truncation
    would bias the stopping-time moments.
    """


@dataclass(frozen=True)
class TimeTriggered:
    """Broadcast every ``period`` seconds."""

    period: float

    def __post_init__(self) -> None:
        if not self.period > 0:
            raise ValueError("period must be > 0")


@dataclass(frozen=True)
class EventTriggered:
    """Broadcast when any |deviation| reaches ``threshold``."""

    threshold: float

    def __post_init__(self) -> None:
        if not self.threshold > 0:
            raise ValueError("threshold must be > 0")


TriggerScheme = TimeTriggered | EventTriggered


@dataclass(frozen=True)
class TriggerEvent:
    """One transmission event within an interval."""

    time: float
    agent: int | None  # 0-based triggering agent, None under time-triggering
    kind: str  # "time" | "event"


@dataclass(frozen=True)
class IntervalSample:
    """One simulated inter-event interval with its accumulated cost integrals."""

    T: float
    q_pair: float
    q_single: float
    event: TriggerEvent
    n_steps: int


@dataclass(frozen=True)
class IntervalBatch:
    """Per-run results of a Monte Carlo batch, indexed by run.

    Failed runs (step budget exhausted) are excluded from the arrays and
    counted in ``failed_runs``.
    """

    n_agents: int
    scheme: TriggerScheme
    dt: float
    runs: int
    seed: int
    T: np.ndarray
    q_pair: np.ndarray
    q_single: np.ndarray
    trigger_agent: np.ndarray
    run_index: np.ndarray
    failed_runs: int

    @property
    def n_valid(self) -> int:
        return self.T.shape[0]

    def fingerprint(self) -> dict:
        scheme = self.scheme
        if isinstance(scheme, EventTriggered):
            sdesc = {"scheme": "event", "delta": scheme.threshold}
        else:
            sdesc = {"scheme": "time", "period": scheme.period}
        return {"n_agents": self.n_agents, "dt": self.dt, "runs": self.runs, "seed": self.seed, **sdesc}


def period_steps(period: float, dt: float) -> int:
    """Snap a period to a whole number of grid steps (must divide evenly)."""
    m = int(round(period / dt))
    if m < 1 or abs(m * dt - period) > 1e-9 * period:
        raise ValueError(f"period {period} is not a multiple of dt {dt}")
    return m


def check_trigger(state: EnsembleState, scheme: TriggerScheme) -> TriggerEvent | None:
    """Evaluate the triggering condition on the current state."""
    if isinstance(scheme, TimeTriggered):
        # tolerance absorbs float accumulation in externally tracked clocks
        if state.t_since_event >= scheme.period * (1.0 - 1e-12):
            return TriggerEvent(time=state.t_since_event, agent=None, kind="time")
        return None
    crossed = np.abs(state.deviations) >= scheme.threshold
    if crossed.any():
        return TriggerEvent(time=state.t_since_event, agent=int(np.argmax(crossed)), kind="event")
    return None


def _expected_steps(n_agents: int, threshold: float, dt: float) -> int:
    # leading-order mean exit time of the fastest agent, used only to size
    # the first block of the schedule
    if n_agents >= 2:
        mean_t = threshold * threshold / (2.0 * math.log(n_agents))
    else:
        mean_t = threshold * threshold
    return max(16, int(mean_t / dt))


def _block_schedule(n_agents: int, first: int):
    cap = max(64, _BLOCK_ELEMS_CAP // max(n_agents, 1))
    block = min(max(16, first), cap)
    while True:
        yield block
        block = min(block * _BLOCK_GROWTH, cap)


def _ws_view(workspace, name, shape):
    # grow-only flat scratch buffers, reused across runs within a worker
    size = int(np.prod(shape))
    buf = workspace.get(name)
    if buf is None or buf.size < size:
        buf = np.empty(size)
        workspace[name] = buf
    return buf[:size].reshape(shape)


def _drive_interval(n_agents, threshold, total_steps, budget, grid, gens, kernel, bridge,
                    first_block, workspace=None):
    """Run one interval on block kernels until trigger / step cap.

    ``total_steps`` caps the interval deterministically (time-triggered stop
    or long-run horizon truncation); ``budget`` is the failure budget for
    event-triggered intervals.  Returns (steps, q_pair, q_single, agent,
    triggered) where agent is -1 if no threshold crossing occurred.
    """
    dt = grid.dt
    sqrt_dt = math.sqrt(dt)
    ws = workspace if workspace is not None else {}
    dev = _ws_view(ws, "dev", (n_agents,))
    dev[:] = 0.0
    q_pair = 0.0
    q_single = 0.0
    steps_done = 0
    cap_steps = min(total_steps, budget)
    for block in _block_schedule(n_agents, first_block):
        length = min(block, cap_steps - steps_done)
        z = _ws_view(ws, "z", (n_agents, length))
        fill_normal_block(gens, z)
        pair_panels = _ws_view(ws, "pair", (length,))
        single_panels = _ws_view(ws, "single", (length,))
        if bridge:
            uniforms = _ws_view(ws, "uniform", (n_agents, length))
            for j, gen in enumerate(gens):
                gen.random(out=uniforms[j])
            consumed, agent = kernel(dev, z, uniforms, sqrt_dt, dt, threshold, pair_panels, single_panels)
        else:
            consumed, agent = kernel(dev, z, sqrt_dt, dt, threshold, pair_panels, single_panels)
        if consumed > 0:
            q_pair += float(pair_panels[:consumed].sum())
            q_single += float(single_panels[:consumed].sum())
            return steps_done + consumed, q_pair, q_single, agent, True
        q_pair += float(pair_panels.sum())
        q_single += float(single_panels.sum())
        steps_done += length
        if steps_done >= cap_steps:
            return steps_done, q_pair, q_single, -1, False


def simulate_interval(
    n_agents: int,
    scheme: TriggerScheme,
    grid: SimGrid,
    rng: RngStream,
    backend: str | None = None,
    bridge_correction: bool = False,
) -> IntervalSample:
    """Simulate one inter-event interval from consensus.

    Raises StepBudgetExceeded if an event-triggered interval does not fire
    within ``grid.max_steps``.
    """
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    kernel = backends.interval_kernel(backend, bridge=bridge_correction)
    gens = rng.agent_generators(n_agents)
    if isinstance(scheme, TimeTriggered):
        m = period_steps(scheme.period, grid.dt)
        steps, q_pair, q_single, _, _ = _drive_interval(
            n_agents, math.inf, m, m, grid, gens, kernel, bridge_correction, first_block=m
        )
        event = TriggerEvent(time=scheme.period, agent=None, kind="time")
        return IntervalSample(T=scheme.period, q_pair=q_pair, q_single=q_single, event=event, n_steps=steps)
    first = int(1.15 * _expected_steps(n_agents, scheme.threshold, grid.dt)) + 1
    steps, q_pair, q_single, agent, triggered = _drive_interval(
        n_agents, scheme.threshold, grid.max_steps, grid.max_steps, grid, gens, kernel,
        bridge_correction, first_block=first,
    )
    if not triggered:
        raise StepBudgetExceeded(f"no trigger within {grid.max_steps} steps (stream {rng})")
    event = TriggerEvent(time=steps * grid.dt, agent=agent, kind="event")
    return IntervalSample(T=steps * grid.dt, q_pair=q_pair, q_single=q_single, event=event, n_steps=steps)


def simulate_interval_reference(
    n_agents: int,
    scheme: TriggerScheme,
    grid: SimGrid,
    rng: RngStream,
) -> IntervalSample:
    """Step-by-step oracle for the block driver (same draws, same numbers).

    Steps the ensemble one grid point at a time with ``step_ensemble`` and
    accumulates the trapezoid cost with ``accumulate_cost``; used by tests to
    pin the fast path.  Only grid-point monitoring (no bridge correction).
    """
    from .estimators import accumulate_cost

    gens = rng.agent_generators(n_agents)
    state = EnsembleState.at_consensus(n_agents)
    q_pair = 0.0
    q_single = 0.0
    m = period_steps(scheme.period, grid.dt) if isinstance(scheme, TimeTriggered) else None
    while True:
        prev = state
        state = step_ensemble(state, grid, gens)
        dq_pair, dq_single = accumulate_cost(prev.deviations, state.deviations, grid.dt)
        q_pair += dq_pair
        q_single += dq_single
        if m is not None:
            if state.steps_since_event >= m:
                event = TriggerEvent(time=scheme.period, agent=None, kind="time")
                return IntervalSample(scheme.period, q_pair, q_single, event, state.steps_since_event)
        else:
            event = check_trigger(state, scheme)
            if event is not None:
                return IntervalSample(event.time, q_pair, q_single, event, state.steps_since_event)
        if state.steps_since_event >= grid.max_steps:
            raise StepBudgetExceeded(f"no trigger within {grid.max_steps} steps")


# ---------------------------------------------------------------------------
# Batch execution across a worker pool
# ---------------------------------------------------------------------------

_WORKER_CTX: dict = {}


def _init_worker(cfg: dict) -> None:
    _WORKER_CTX.clear()
    _WORKER_CTX.update(cfg)
    _WORKER_CTX["pool"] = StreamPool()
    _WORKER_CTX["kernel"] = backends.interval_kernel(cfg["backend"], bridge=cfg["bridge"])
    _WORKER_CTX["workspace"] = {}


def _run_chunk(bounds: tuple[int, int]):
    start, stop = bounds
    cfg = _WORKER_CTX
    n_agents = cfg["n_agents"]
    grid: SimGrid = cfg["grid"]
    kernel = cfg["kernel"]
    pool: StreamPool = cfg["pool"]
    threshold = cfg["threshold"]
    total_steps = cfg["total_steps"]
    first_block = cfg["first_block"]
    count = stop - start
    T = np.empty(count)
    q_pair = np.empty(count)
    q_single = np.empty(count)
    agent = np.empty(count, dtype=np.int64)
    failed = np.zeros(count, dtype=bool)
    workspace = cfg["workspace"]
    for i in range(count):
        gens = pool.seat(cfg["seed"], start + i, n_agents)
        steps, qp, qs, ag, triggered = _drive_interval(
            n_agents, threshold, total_steps, grid.max_steps, grid, gens, kernel,
            cfg["bridge"], first_block, workspace,
        )
        if cfg["is_time"]:
            T[i] = cfg["period"]
            agent[i] = -1
        elif triggered:
            T[i] = steps * grid.dt
            agent[i] = ag
        else:
            failed[i] = True
        q_pair[i] = qp
        q_single[i] = qs
    return start, T, q_pair, q_single, agent, failed


def run_interval_batch(
    n_agents: int,
    scheme: TriggerScheme,
    grid: SimGrid,
    runs: int,
    seed: int,
    workers: int = 1,
    backend: str | None = None,
    bridge_correction: bool = False,
) -> IntervalBatch:
    """Simulate ``runs`` independent first intervals, reduced by run index.

    Results are byte-identical for any ``workers`` value: run r always uses
    stream (seed, r) and the reduction fills arrays by absolute run index.
    """
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    if runs < 2:
        raise ValueError("runs must be >= 2")
    if isinstance(scheme, TimeTriggered):
        m = period_steps(scheme.period, grid.dt)
        cfg = dict(threshold=math.inf, total_steps=m, first_block=m, is_time=True, period=scheme.period)
    else:
        first = int(1.15 * _expected_steps(n_agents, scheme.threshold, grid.dt)) + 1
        cfg = dict(threshold=scheme.threshold, total_steps=grid.max_steps, first_block=first,
                   is_time=False, period=0.0)
    cfg.update(n_agents=n_agents, grid=grid, seed=seed, backend=backends.resolve_backend(backend),
               bridge=bridge_correction)

    T = np.empty(runs)
    q_pair = np.empty(runs)
    q_single = np.empty(runs)
    agent = np.empty(runs, dtype=np.int64)
    failed = np.zeros(runs, dtype=bool)

    chunk = max(1, min(runs, math.ceil(runs / (max(workers, 1) * 8))))
    bounds = [(s, min(s + chunk, runs)) for s in range(0, runs, chunk)]

    if workers <= 1:
        _init_worker(cfg)
        results = map(_run_chunk, bounds)
        for start, t, qp, qs, ag, fl in results:
            stop = start + t.shape[0]
            T[start:stop] = t
            q_pair[start:stop] = qp
            q_single[start:stop] = qs
            agent[start:stop] = ag
            failed[start:stop] = fl
    else:
        backends.warm_up(cfg["backend"])  # compile before forking
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=workers, initializer=_init_worker, initargs=(cfg,)) as pool:
            for start, t, qp, qs, ag, fl in pool.imap_unordered(_run_chunk, bounds):
                stop = start + t.shape[0]
                T[start:stop] = t
                q_pair[start:stop] = qp
                q_single[start:stop] = qs
                agent[start:stop] = ag
                failed[start:stop] = fl

    ok = ~failed
    return IntervalBatch(
        n_agents=n_agents,
        scheme=scheme,
        dt=grid.dt,
        runs=runs,
        seed=seed,
        T=T[ok],
        q_pair=q_pair[ok],
        q_single=q_single[ok],
        trigger_agent=agent[ok],
        run_index=np.flatnonzero(ok),
        failed_runs=int(failed.sum()),
    )
