"""Monte Carlo engine comparing time- and event-triggered broadcasting for
noisy single-integrator consensus at equal average transmission rates."""

from .analytics import (
    AsymptoticReport,
    EULER_GAMMA,
    TAIL_KAPPA,
    exit_time_asymptotics,
    gumbel_cdf,
    gumbel_centering,
    gumbel_ks_distance,
    gumbel_quantile,
    gumbel_tail,
    ks_distance,
    min_exit_time_moments,
    single_exit_time_cdf,
    single_exit_time_survival,
    time_triggered_cost,
)
from .backends import available_backends, default_backend
from .core import EnsembleState, SimGrid, reset_to_consensus, step_deviations, step_ensemble
from .estimators import (
    CostEstimate,
    FirstIntervalCost,
    MomentStats,
    accumulate_cost,
    cost_from_batch,
    estimate_cost_first_interval,
    estimate_cost_longrun,
    estimate_exit_moments,
    moment_stats,
    pair_deviation_energy,
)
from .rng import RngStream, StreamPool
from .sweep import ExperimentConfig, RatioRow, Report, run_command, run_ratio_sweep
from .triggering import (
    EventTriggered,
    IntervalBatch,
    IntervalSample,
    StepBudgetExceeded,
    TimeTriggered,
    TriggerEvent,
    check_trigger,
    run_interval_batch,
    simulate_interval,
)

__version__ = "0.1.0"
