"""Ancestral sampling of next states and multi-step rollouts."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..encode import DecodeError
from ..nn import Tensor, no_grad
from ..seeding import derive_rng
from .model import GdnModel, prepare
from .schedule import NoiseSchedule


class SamplingError(RuntimeError):
    pass


def ancestral_sample(schedule: NoiseSchedule, eps_fn: Callable[[np.ndarray, int], np.ndarray],
                     x_init: np.ndarray, noise_fn: Callable[[int, tuple], np.ndarray] | None) -> np.ndarray:
    """Reverse chain from ``x_init`` at tau_max down to tau = 1.

    ``noise_fn(tau, shape)`` supplies z for tau > 1 (None -> z = 0 throughout);
    the final step never adds noise.
    """
    x = np.array(x_init, dtype=np.float64)
    for tau in range(schedule.tau_max, 0, -1):
        a, ab = schedule.alpha[tau], schedule.alpha_bar[tau]
        x = (x - (1.0 - a) / np.sqrt(1.0 - ab) * eps_fn(x, tau)) / np.sqrt(a)
        if tau > 1 and noise_fn is not None:
            x = x + schedule.sigma[tau] * noise_fn(tau, x.shape)
    return x


def _noise_blocks(rngs: Sequence[np.random.Generator], sizes: Sequence[int], dim: int):
    """Per-block noise so each block's stream is independent of batch composition."""
    def draw(shape):
        return np.concatenate([g.standard_normal((n, dim)) for g, n in zip(rngs, sizes)], axis=0)
    return draw


def sample_dynamic(model: GdnModel, states: list, rngs: Sequence[np.random.Generator],
                   repeats: int = 1) -> np.ndarray:
    """Denoised dynamic features for every agent of every state.

    Each state is repeated ``repeats`` times (independent samples under the
    same conditioning). Returns ``[len(states), repeats, n_agents, dyn]``.
    ``rngs[k]`` drives all randomness of state k.
    """
    if len(rngs) != len(states):
        raise ValueError("need one generator per conditioning state")
    dyn = model.codec.dynamic_dim
    n = states[0].n_agents
    with no_grad():
        prep = prepare(model, states)
        static = model.static_condition(prep.Z, prep.graph, prep.n_systems).data
    static = np.repeat(static.reshape(len(states), 1, n, -1), repeats, axis=1).reshape(-1, static.shape[1])
    sizes = [repeats * n] * len(states)
    draw = _noise_blocks(rngs, sizes, dyn)
    time_cache: dict[int, np.ndarray] = {}

    def eps_fn(x, tau):
        with no_grad():
            if tau not in time_cache:
                time_cache[tau] = model.time_condition(tau).data
            return model.eps(Tensor(x), Tensor(static + time_cache[tau])).data

    x = ancestral_sample(model.schedule, eps_fn, draw(None), lambda tau, shape: draw(shape))
    if not np.isfinite(x).all():
        raise SamplingError("sampler produced non-finite values")
    return x.reshape(len(states), repeats, n, dyn)


def sample_next_states(model: GdnModel, states: list, rngs: Sequence[np.random.Generator]) -> list:
    """One decoded successor per state, all agents committed simultaneously."""
    dyn = sample_dynamic(model, states, rngs)
    try:
        return [model.codec.decode_dynamic(dyn[k, 0], s) for k, s in enumerate(states)]
    except DecodeError as exc:
        raise SamplingError(str(exc)) from exc


def sample_next_state(model: GdnModel, agent_id: int, state, rng: np.random.Generator):
    """Single-agent view of a whole-system draw."""
    return sample_next_states(model, [state], [rng])[0].agent(agent_id)


def rollout(model: GdnModel, initial, steps: int, n_runs: int, seed: int,
            batch_size: int | None = None) -> list[list]:
    """``n_runs`` free-running trajectories of ``steps`` transitions each.

    Run k uses generator ``derive_rng(seed, "rollout", k)`` for all its draws,
    so any run can be reproduced alone. Runs go through the network in chunks
    of ``batch_size`` (all at once by default); chunking does not change the
    output because noise is drawn per run.
    """
    batch_size = batch_size or n_runs
    rngs = [derive_rng(seed, "rollout", k) for k in range(n_runs)]
    trajs = [[initial] for _ in range(n_runs)]
    for _ in range(steps):
        for lo in range(0, n_runs, batch_size):
            chunk = trajs[lo:lo + batch_size]
            nxt = sample_next_states(model, [tr[-1] for tr in chunk], rngs[lo:lo + batch_size])
            for tr, s in zip(chunk, nxt):
                tr.append(s)
    return trajs
