"""Closed forms, extreme-value asymptotics, and independent analytic oracles.

Sign convention: the limit variable G of the rescaled fastest exit time has
upper tail P(G >= r) = exp(-exp(r)).  This is the negative of the common
Gumbel convention, so E[G] = -euler_gamma and V[G] = pi^2/6.  All formulas
here follow that convention.

The single-agent exit-time distribution (first time |B_t| reaches the
threshold) is evaluated through the reflection theta series for the running
maximum of |B|; it is the designated independent oracle for stopping-time
tests, so Monte Carlo checks never validate the simulator against itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EULER_GAMMA = 0.5772156649015329
# tail prefactor of the single-agent exit-time law used in the centering
# constant below
TAIL_KAPPA = math.sqrt(2.0 / math.pi)

_SERIES_TOL = 1e-12
_SERIES_MAX_TERMS = 200_000


def time_triggered_cost(n_agents: int, period: float) -> float:
    """Long-run pair cost of periodic broadcasting: N(N-1) * period / 2."""
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    if not period > 0:
        raise ValueError("period must be > 0")
    return n_agents * (n_agents - 1) * period / 2.0


def gumbel_centering(n_agents: float) -> float:
    """Centering constant of the rescaled fastest-exit-time limit law.

    a(N) = 1/(2 ln N) - ln(kappa / sqrt(2 ln N)) / (2 (ln N)^2) with
    kappa = sqrt(2/pi).
    """
    if n_agents < 2:
        raise ValueError("centering requires n_agents >= 2")
    log_n = math.log(n_agents)
    c_n = TAIL_KAPPA / math.sqrt(2.0 * log_n)
    return 1.0 / (2.0 * log_n) - math.log(c_n) / (2.0 * log_n * log_n)


@dataclass(frozen=True)
class AsymptoticReport:
    """Leading-order behaviour of the event-triggered scheme for N agents."""

    n_agents: float
    centering: float  # a(N), seconds
    tail_coefficient: float  # c(N) = kappa / sqrt(2 ln N)
    mean_exit_leading: float  # 1 / (2 ln N)
    second_moment_leading: float  # 1 / (2 ln N)^2
    var_exit_leading: float  # (pi^2/24) / (ln N)^4
    cost_leading: float  # N(N-1) / (4 ln N)


def exit_time_asymptotics(n_agents: float) -> AsymptoticReport:
    """Leading-order moments of the fastest exit time and the matched cost."""
    if n_agents < 2:
        raise ValueError("asymptotics require n_agents >= 2")
    log_n = math.log(n_agents)
    return AsymptoticReport(
        n_agents=n_agents,
        centering=gumbel_centering(n_agents),
        tail_coefficient=TAIL_KAPPA / math.sqrt(2.0 * log_n),
        mean_exit_leading=1.0 / (2.0 * log_n),
        second_moment_leading=1.0 / (2.0 * log_n) ** 2,
        var_exit_leading=(math.pi ** 2 / 24.0) / log_n ** 4,
        cost_leading=n_agents * (n_agents - 1) / (4.0 * log_n),
    )


def gumbel_tail(r):
    """P(G >= r) = exp(-exp(r)) (note the sign convention in the module doc)."""
    r = np.asarray(r, dtype=float)
    out = np.exp(-np.exp(np.clip(r, -745.0, 709.0)))
    return float(out) if out.ndim == 0 else out


def gumbel_cdf(r):
    """P(G <= r) = 1 - exp(-exp(r))."""
    r = np.asarray(r, dtype=float)
    out = -np.expm1(-np.exp(np.clip(r, -745.0, 709.0)))
    return float(out) if out.ndim == 0 else out


def gumbel_quantile(u):
    """Inverse of gumbel_cdf on (0, 1), for inverse-transform sampling."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("u must lie strictly inside (0, 1)")
    out = np.log(-np.log1p(-u))
    return float(out) if out.ndim == 0 else out


def _sup_below(w, delta):
    """P(sup_{[0,w]} |B| < delta), vectorised theta series.

    Alternating series with strictly decreasing term magnitudes, truncated
    once a term falls below 1e-12 (truncation error bounded by the first
    dropped term).  For w < delta^2/78 the exceedance probability is below
    double precision and the value is 1 exactly.
    """
    w1 = np.atleast_1d(np.asarray(w, dtype=float))
    scale = math.pi ** 2 / (8.0 * delta * delta)
    out = np.ones_like(w1)
    live = w1 >= (delta * delta) / 78.0
    wl = w1[live]
    acc = np.zeros_like(wl)
    active = np.ones_like(wl, dtype=bool)
    for k in range(_SERIES_MAX_TERMS):
        m = 2 * k + 1
        term = (4.0 / math.pi) * ((-1.0) ** k / m) * np.exp(-(m * m) * scale * wl[active])
        acc[active] += term
        still = np.abs(term) >= _SERIES_TOL
        if not still.any():
            break
        idx = np.flatnonzero(active)
        active[idx[~still]] = False
    else:  # pragma: no cover - cannot happen with the small-w shortcut
        raise RuntimeError("theta series failed to converge")
    out[live] = np.clip(acc, 0.0, 1.0)
    return out.reshape(np.shape(w))


def single_exit_time_survival(w, delta: float = 1.0):
    """P(T > w) for the first time |B| reaches delta, starting at 0."""
    if delta <= 0:
        raise ValueError("delta must be > 0")
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("w must be >= 0")
    out = _sup_below(w, delta)
    return float(out) if out.ndim == 0 else out


def single_exit_time_cdf(w, delta: float = 1.0):
    """P(T <= w) for the single-agent exit time."""
    if delta <= 0:
        raise ValueError("delta must be > 0")
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("w must be > 0")
    out = 1.0 - _sup_below(w, delta)
    return float(out) if out.ndim == 0 else out


def min_exit_time_moments(n_agents: int, delta: float = 1.0) -> tuple[float, float]:
    """Quadrature oracle for E[T] and E[T^2] of the fastest of N exits.

    The fastest exit time of N independent agents has survival function
    survival(w)^N; mean and second moment follow from integrating the
    survival function (and 2w times it) over w.  Brute-force quadrature,
    accurate to ~1e-6 relative; independent of the simulator.
    """
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    d2 = delta * delta
    w = np.concatenate([
        np.linspace(0.0, 0.02 * d2, 4001)[1:],
        np.linspace(0.02 * d2, 2.0 * d2, 400001)[1:],
        np.linspace(2.0 * d2, 60.0 * d2, 40001)[1:],
    ])
    surv = single_exit_time_survival(w, delta) ** n_agents
    w = np.concatenate([[0.0], w])
    surv = np.concatenate([[1.0], surv])
    mean = float(np.trapezoid(surv, w))
    second = float(np.trapezoid(2.0 * w * surv, w))
    return mean, second


def ks_distance(samples: np.ndarray, cdf) -> float:
    """One-sample Kolmogorov-Smirnov distance of samples to a CDF callable."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.shape[0]
    if n < 1:
        raise ValueError("need at least one sample")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def gumbel_ks_distance(samples: np.ndarray, n_agents: int) -> float:
    """KS distance of rescaled exit times to the limit law.

    Samples are rescaled to r = 2 (ln N)^2 (T - a(N)) and compared with the
    CDF 1 - exp(-exp(r)).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] < 100:
        raise ValueError("need at least 100 samples for a meaningful KS distance")
    if n_agents < 2:
        raise ValueError("n_agents must be >= 2")
    log_n = math.log(n_agents)
    r = 2.0 * log_n * log_n * (samples - gumbel_centering(n_agents))
    return ks_distance(r, gumbel_cdf)
