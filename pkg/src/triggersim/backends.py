"""Hot block kernels: numba-jitted loops with a pure-numpy fallback.

The backend is selected with the ``TRIGGERSIM_BACKEND`` environment variable
("numba" or "numpy"); unset means numba when importable, numpy otherwise.
Both implementations perform the identical floating-point operations in the
identical order (path and agent reductions are strictly sequential, no
fastmath), so their outputs are bitwise equal; ``tests/test_backends.py``
asserts that and ``python -m triggersim.bench`` compares their speed.

Kernel contract (one block of an inter-event interval):

* ``dev`` holds the per-agent deviations since the last reset and is updated
  in place to the state at the stopping step (trigger) or block end.
* ``z[j, k]`` is agent j's standard-normal increment for step k.
* Writes per-step trapezoid panels of the two cost integrands into
  ``pair_panels`` / ``single_panels``; the pair integrand uses the O(N)
  identity N*sum(d^2) - (sum d)^2.
* Returns ``(steps_consumed, trigger_agent)`` where steps_consumed == 0
  means the block finished without a threshold crossing and trigger_agent
  is -1.  When a crossing is reported, only panels[:steps_consumed] are
  meaningful.  Ties (several agents crossing at one step) report the lowest
  agent index.
* ``uniforms`` (optional, same shape as ``z``) enables the Brownian-bridge
  sub-step crossing check; pass None for plain grid-point monitoring.
"""

from __future__ import annotations

import math
import os

import numpy as np

ENV_BACKEND = "TRIGGERSIM_BACKEND"

try:  # pragma: no cover - import guard
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False


def _interval_block_loop(dev, z, sqrt_dt, dt, threshold, pair_panels, single_panels):
    n = dev.shape[0]
    length = z.shape[1]
    s1 = 0.0
    s2 = 0.0
    for j in range(n):
        s1 += dev[j]
        s2 += dev[j] * dev[j]
    f_pair_prev = n * s2 - s1 * s1
    f_single_prev = dev[0] * dev[0]
    for k in range(length):
        s1 = 0.0
        s2 = 0.0
        hit = -1
        for j in range(n):
            d = dev[j] + sqrt_dt * z[j, k]
            dev[j] = d
            s1 += d
            s2 += d * d
            if hit < 0 and (d >= threshold or -d >= threshold):
                hit = j
        f_pair = n * s2 - s1 * s1
        f_single = dev[0] * dev[0]
        pair_panels[k] = 0.5 * dt * (f_pair_prev + f_pair)
        single_panels[k] = 0.5 * dt * (f_single_prev + f_single)
        f_pair_prev = f_pair
        f_single_prev = f_single
        if hit >= 0:
            return k + 1, hit
    return 0, -1


def _interval_block_bridge_loop(dev, z, uniforms, sqrt_dt, dt, threshold, pair_panels, single_panels):
    # Grid stepping as above plus a Brownian-bridge crossing test per panel:
    # conditional on the endpoints the bridge exceeds +threshold (resp. dips
    # below -threshold) with probability exp(-2(th-a)(th-b)/dt); a uniform per
    # agent-step decides.  Event time is still reported at the grid point.
    n = dev.shape[0]
    length = z.shape[1]
    s1 = 0.0
    s2 = 0.0
    for j in range(n):
        s1 += dev[j]
        s2 += dev[j] * dev[j]
    f_pair_prev = n * s2 - s1 * s1
    f_single_prev = dev[0] * dev[0]
    for k in range(length):
        s1 = 0.0
        s2 = 0.0
        hit = -1
        for j in range(n):
            a = dev[j]
            d = a + sqrt_dt * z[j, k]
            dev[j] = d
            s1 += d
            s2 += d * d
            if hit < 0:
                if d >= threshold or -d >= threshold:
                    hit = j
                else:
                    p_up = math.exp(-2.0 * (threshold - a) * (threshold - d) / dt)
                    p_dn = math.exp(-2.0 * (threshold + a) * (threshold + d) / dt)
                    if uniforms[j, k] < p_up + p_dn:
                        hit = j
        f_pair = n * s2 - s1 * s1
        f_single = dev[0] * dev[0]
        pair_panels[k] = 0.5 * dt * (f_pair_prev + f_pair)
        single_panels[k] = 0.5 * dt * (f_single_prev + f_single)
        f_pair_prev = f_pair
        f_single_prev = f_single
        if hit >= 0:
            return k + 1, hit
    return 0, -1


def _interval_block_numpy(dev, z, sqrt_dt, dt, threshold, pair_panels, single_panels):
    n, length = z.shape
    path = np.empty((n, length + 1))
    path[:, 0] = dev
    np.multiply(z, sqrt_dt, out=path[:, 1:])
    np.cumsum(path, axis=1, out=path)  # sequential, matches the loop order

    crossed = np.abs(path[:, 1:]) >= threshold
    any_cross = crossed.any(axis=0)
    if any_cross.any():
        stop = int(np.argmax(any_cross)) + 1
        agent = int(np.argmax(crossed[:, stop - 1]))
    else:
        stop = 0
        agent = -1
    upto = stop if stop > 0 else length

    seg = path[:, : upto + 1]
    sq = seg * seg
    s1 = np.cumsum(seg, axis=0)[-1]  # sequential agent reduction
    s2 = np.cumsum(sq, axis=0)[-1]
    f_pair = n * s2 - s1 * s1
    f_single = sq[0]
    pair_panels[:upto] = 0.5 * dt * (f_pair[:-1] + f_pair[1:])
    single_panels[:upto] = 0.5 * dt * (f_single[:-1] + f_single[1:])

    dev[:] = path[:, upto]
    return stop, agent


def _interval_block_bridge_numpy(dev, z, uniforms, sqrt_dt, dt, threshold, pair_panels, single_panels):
    n, length = z.shape
    path = np.empty((n, length + 1))
    path[:, 0] = dev
    np.multiply(z, sqrt_dt, out=path[:, 1:])
    np.cumsum(path, axis=1, out=path)

    a = path[:, :-1]
    b = path[:, 1:]
    grid_cross = np.abs(b) >= threshold
    # exponent is clipped to 0 where an endpoint already crossed; those
    # entries are decided by grid_cross anyway
    up = np.minimum(-2.0 * (threshold - a) * (threshold - b) / dt, 0.0)
    dn = np.minimum(-2.0 * (threshold + a) * (threshold + b) / dt, 0.0)
    crossed = grid_cross | (uniforms < np.exp(up) + np.exp(dn))
    any_cross = crossed.any(axis=0)
    if any_cross.any():
        stop = int(np.argmax(any_cross)) + 1
        agent = int(np.argmax(crossed[:, stop - 1]))
    else:
        stop = 0
        agent = -1
    upto = stop if stop > 0 else length

    seg = path[:, : upto + 1]
    sq = seg * seg
    s1 = np.cumsum(seg, axis=0)[-1]
    s2 = np.cumsum(sq, axis=0)[-1]
    f_pair = n * s2 - s1 * s1
    f_single = sq[0]
    pair_panels[:upto] = 0.5 * dt * (f_pair[:-1] + f_pair[1:])
    single_panels[:upto] = 0.5 * dt * (f_single[:-1] + f_single[1:])

    dev[:] = path[:, upto]
    return stop, agent


if HAS_NUMBA:
    _interval_block_numba = numba.njit(cache=True)(_interval_block_loop)
    _interval_block_bridge_numba = numba.njit(cache=True)(_interval_block_bridge_loop)


def available_backends() -> tuple[str, ...]:
    return ("numba", "numpy") if HAS_NUMBA else ("numpy",)


def default_backend() -> str:
    choice = os.environ.get(ENV_BACKEND, "").strip().lower()
    if choice in ("numba", "numpy"):
        if choice == "numba" and not HAS_NUMBA:
            raise RuntimeError("TRIGGERSIM_BACKEND=numba but numba is not importable")
        return choice
    if choice:
        raise RuntimeError(f"unknown {ENV_BACKEND}={choice!r}; use 'numba' or 'numpy'")
    return "numba" if HAS_NUMBA else "numpy"


def resolve_backend(backend: str | None = None) -> str:
    if backend is None:
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    return backend


def interval_kernel(backend: str | None = None, bridge: bool = False):
    """Return the block kernel for the chosen backend."""
    name = resolve_backend(backend)
    if name == "numba":
        return _interval_block_bridge_numba if bridge else _interval_block_numba
    return _interval_block_bridge_numpy if bridge else _interval_block_numpy


def warm_up(backend: str | None = None) -> None:
    """Trigger jit compilation before forking worker processes."""
    if resolve_backend(backend) != "numba":
        return
    dev = np.zeros(2)
    z = np.zeros((2, 4))
    u = np.full((2, 4), 0.5)
    pp = np.zeros(4)
    sp = np.zeros(4)
    _interval_block_numba(dev, z, 0.1, 0.01, 1.0, pp, sp)
    _interval_block_bridge_numba(np.zeros(2), z, u, 0.1, 0.01, 1.0, pp, sp)
