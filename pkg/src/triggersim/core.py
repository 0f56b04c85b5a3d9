"""Ensemble state and the elementary step/reset operations.

Between transmission events every agent is a standard Brownian motion, so
the ensemble is simulated through its deviations from the value broadcast at
the last event: the broadcast resets all agents to a common value, and both
the triggering rule and the quadratic cost depend only on those deviations.
One grid step adds sqrt(dt) * z per agent with independent standard normal
z, which is the Euler-Maruyama update and is exact in distribution for
Brownian motion at the grid points (there is no drift between events).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .rng import RngStream


@dataclass(frozen=True)
class SimGrid:
    """Fixed simulation grid: step size and per-interval step budget."""

    dt: float = 1e-4
    max_steps: int = 10_000_000

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")


@dataclass(frozen=True)
class EnsembleState:
    """Deviations of each agent from the last broadcast value.

    Immediately after a reset all deviations are zero.  ``steps_since_event``
    carries the integer grid position so elapsed time is always computed as
    ``steps * dt`` (no accumulated float drift).
    """

    n_agents: int
    deviations: np.ndarray
    t_since_event: float = 0.0
    steps_since_event: int = 0

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        dev = np.asarray(self.deviations, dtype=float)
        if dev.shape != (self.n_agents,):
            raise ValueError(f"deviations must have shape ({self.n_agents},), got {dev.shape}")
        object.__setattr__(self, "deviations", dev)

    @classmethod
    def at_consensus(cls, n_agents: int) -> "EnsembleState":
        return cls(n_agents=n_agents, deviations=np.zeros(n_agents))


def step_deviations(deviations: np.ndarray, dt: float, z: np.ndarray) -> np.ndarray:
    """One Brownian grid step of the deviation vector (dt = 0 is the identity)."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    return deviations + np.sqrt(dt) * z


def step_ensemble(
    state: EnsembleState,
    grid: SimGrid,
    streams: list[np.random.Generator] | RngStream,
) -> EnsembleState:
    """Advance the ensemble by one grid step.

    ``streams`` is either the list of live per-agent generators (stateful
    across successive steps of one trajectory) or an ``RngStream`` address,
    in which case fresh generators are materialised, so two calls with the
    same address return bitwise-identical results.
    """
    if isinstance(streams, RngStream):
        streams = streams.agent_generators(state.n_agents)
    z = np.array([g.standard_normal() for g in streams])
    steps = state.steps_since_event + 1
    return replace(
        state,
        deviations=step_deviations(state.deviations, grid.dt, z),
        t_since_event=steps * grid.dt,
        steps_since_event=steps,
    )


def reset_to_consensus(state: EnsembleState) -> EnsembleState:
    """Apply the broadcast impulse: all deviations to zero, clock to zero."""
    return EnsembleState.at_consensus(state.n_agents)
