"""Ground-truth agent-based models."""

from __future__ import annotations

import dataclasses

import numpy as np

from .predprey import (
    PredPreyAgent,
    PredPreyEngine,
    PredPreyParams,
    PredPreyState,
    predprey_init,
    predprey_step,
    preset_matrix,
)
from .schelling import (
    CapacityError,
    SchellingAgent,
    SchellingEngine,
    SchellingParams,
    SchellingState,
    schelling_init,
    schelling_relocate,
    schelling_similarity,
    schelling_step,
)

MODELS = ("schelling", "predprey")


def params_from_dict(model: str, d: dict):
    d = dict(d)
    if model == "schelling":
        return SchellingParams(**d)
    if model == "predprey":
        psi = d.pop("psi", "psi1")
        if isinstance(psi, str):
            psi = preset_matrix(psi)
        return PredPreyParams(psi=np.asarray(psi, dtype=np.float64), **d)
    raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


def params_to_dict(params) -> dict:
    d = dataclasses.asdict(params)
    if "psi" in d:
        d["psi"] = [list(row) for row in d["psi"]]
    return d


def make_engine(model: str, params):
    if isinstance(params, dict):
        params = params_from_dict(model, params)
    if model == "schelling":
        return SchellingEngine(params)
    if model == "predprey":
        return PredPreyEngine(params)
    raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


def simulate(engine, steps: int, rng: np.random.Generator, initial=None) -> list:
    """Main-branch trajectory; stops early once the engine reports a terminal state."""
    state = engine.initial_state(rng) if initial is None else initial
    states = [state]
    for _ in range(steps):
        if engine.is_terminal(state):
            break
        state = engine.step(state, rng)
        states.append(state)
    return states


def macro_stats(state, engine) -> dict[str, int]:
    return engine.macro_stats(state)
