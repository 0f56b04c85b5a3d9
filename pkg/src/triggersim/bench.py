"""Backend benchmark: numba kernels vs the pure-numpy fallback.

Usage: python -m triggersim.bench [--agents 2,12,72] [--runs 300] [--dt 1e-4]

Times the first-interval batch for each backend at each ensemble size and
reports throughput in simulated agent-steps per second, plus a generation
baseline (the Philox draws alone) to show how much headroom the kernels
leave.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from . import backends
from .core import SimGrid
from .rng import StreamPool
from .triggering import EventTriggered, run_interval_batch


def _time_batch(n_agents, runs, dt, backend, seed=0):
    grid = SimGrid(dt=dt)
    scheme = EventTriggered(1.0)
    backends.warm_up(backend)
    t0 = time.perf_counter()
    batch = run_interval_batch(n_agents, scheme, grid, runs, seed, backend=backend)
    elapsed = time.perf_counter() - t0
    steps = float(np.round(batch.T / dt).sum())
    return elapsed, steps * n_agents, batch


def _time_generation(n_agents, total_draws, seed=0):
    pool = StreamPool()
    gens = pool.seat(seed, 0, n_agents)
    block = max(1, int(total_draws // n_agents))
    buf = np.empty((n_agents, block))
    t0 = time.perf_counter()
    for j, gen in enumerate(gens):
        gen.standard_normal(out=buf[j])
    return time.perf_counter() - t0, n_agents * block


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="triggersim.bench", description=__doc__)
    parser.add_argument("--agents", default="2,12,72",
                        help="comma-separated ensemble sizes (default 2,12,72)")
    parser.add_argument("--runs", type=int, default=300)
    parser.add_argument("--dt", type=float, default=1e-4)
    args = parser.parse_args(argv)
    sizes = [int(tok) for tok in args.agents.split(",") if tok.strip()]

    names = backends.available_backends()
    if "numba" not in names:
        print("note: numba not importable, benchmarking the numpy fallback only")
    print(f"{'N':>6} {'backend':>8} {'runs':>6} {'wall_s':>9} {'Magent-steps/s':>15} {'vs numpy':>9}")
    for n in sizes:
        results = {}
        for backend in names:
            elapsed, agent_steps, _ = _time_batch(n, args.runs, args.dt, backend)
            results[backend] = (elapsed, agent_steps / elapsed)
        for backend in names:
            elapsed, rate = results[backend]
            speedup = f"{rate / results['numpy'][1]:8.1f}x" if backend == "numba" else ""
            print(f"{n:6d} {backend:>8} {args.runs:6d} {elapsed:9.3f} "
                  f"{rate / 1e6:15.1f} {speedup:>9}", flush=True)
        gen_elapsed, gen_draws = _time_generation(n, max(agent_steps, 1_000_000))
        print(f"{n:6d} {'rng-only':>8} {'':6} {gen_elapsed:9.3f} {gen_draws / gen_elapsed / 1e6:15.1f}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
