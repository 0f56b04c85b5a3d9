"""Counter-based random number streams for reproducible parallel Monte Carlo.

Every trajectory draws its noise from Philox counter-based streams addressed
by ``(master_seed, stream_index, agent_index)``:

* ``key[0]``   = splitmix64(master_seed)   (diffused user seed)
* ``key[1]``   = stream_index              (one stream per Monte Carlo run)
* ``counter[2]`` = agent_index             (disjoint 2**128-draw sub-ranges)

Distinct keys give statistically independent Philox output, and the agent
offset in the counter is exactly what ``numpy.random.Philox.jumped(agent)``
would produce, so each agent owns an independent sub-stream whose draws do
not depend on the ensemble size, the time step, or the triggering scheme.
That is what makes common-random-number coupling across ensemble sizes and
across threshold scalings exact, and it makes every sampled number a pure
function of the addressing tuple, independent of worker scheduling.

Agent sub-streams are realised with numpy ``Generator`` objects.  Creating
one per (run, agent) is too slow for large ensembles, so ``StreamPool``
keeps one Philox/Generator pair per agent slot and re-seats its state per
run; re-seating is bitwise identical to fresh construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF

# Stream-index namespaces.  Interval runs use indices [0, runs); long-run
# trajectories live in a disjoint range so they never share a stream with
# the first-interval estimator at the same seed.
LONGRUN_STREAM_BASE = 1 << 62


def splitmix64(value: int) -> int:
    """Diffuse a 64-bit integer (splitmix64 finalizer)."""
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RngStream:
    """Address of one run-level noise stream.

    Two streams with distinct ``(master_seed, stream_index)`` are independent;
    identical addresses reproduce the identical sequence on every execution
    and under any parallel schedule.
    """

    master_seed: int
    stream_index: int

    def agent_generators(self, n_agents: int) -> list[np.random.Generator]:
        """Fresh per-agent generators for this stream (slow path, small N)."""
        key0 = splitmix64(self.master_seed)
        gens = []
        for agent in range(n_agents):
            ph = np.random.Philox(key=np.array([key0, self.stream_index & _MASK64], dtype=np.uint64))
            gens.append(np.random.Generator(ph.jumped(agent)))
        return gens


class StreamPool:
    """Reusable per-agent Philox generators, re-seated per run.

    One pool per worker process.  ``seat`` positions agent slot ``j`` at the
    start of the (master_seed, stream_index, j) sub-stream; subsequent draws
    from the returned generators continue those sub-streams.
    """

    def __init__(self) -> None:
        self._bitgens: list[np.random.Philox] = []
        self._gens: list[np.random.Generator] = []

    def _grow(self, n: int) -> None:
        while len(self._gens) < n:
            ph = np.random.Philox(key=np.array([0, 0], dtype=np.uint64))
            self._bitgens.append(ph)
            self._gens.append(np.random.Generator(ph))

    def seat(self, master_seed: int, stream_index: int, n_agents: int) -> list[np.random.Generator]:
        self._grow(n_agents)
        key0 = splitmix64(master_seed)
        key1 = stream_index & _MASK64
        for j in range(n_agents):
            ph = self._bitgens[j]
            state = ph.state
            inner = state["state"]
            inner["key"][0] = key0
            inner["key"][1] = key1
            inner["counter"][:] = 0
            inner["counter"][2] = j
            state["buffer_pos"] = 4
            state["has_uint32"] = 0
            state["uinteger"] = 0
            ph.state = state
        return self._gens[:n_agents]


def fill_normal_block(gens: list[np.random.Generator], out: np.ndarray) -> None:
    """Fill ``out[j, :]`` with the next draws of agent ``j``'s sub-stream.

    ``out`` must be C-contiguous with shape (n_agents, block_len): row slices
    are then contiguous and ``standard_normal(out=...)`` writes in place.
    """
    for j, gen in enumerate(gens):
        gen.standard_normal(out=out[j])
