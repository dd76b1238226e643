"""Schelling segregation on an L x L torus.

Agents are happy when the fraction of same-colour Moore neighbours is at
least the tolerance; unhappy agents attempt up to ``max_trials`` relocations
along a random direction and distance, wrapping at the border.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import MOORE, cell_counts, neighbourhood_sum

COLORS = ("C1", "C2")


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class SchellingParams:
    grid_size: int = 51
    tolerance: float = 0.75
    density: float = 0.75
    max_steps: int = 30
    max_distance: float | None = None  # None -> grid_size
    max_trials: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.density > 1:
            raise CapacityError(f"density {self.density} exceeds grid capacity")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if self.grid_size < 3:
            raise ValueError("grid size must be at least 3")
        if not 0 <= self.tolerance <= 1:
            raise ValueError("tolerance must lie in [0, 1]")
        if self.d_max < 1 or self.max_trials < 1:
            raise ValueError("max distance and max trials must be >= 1")

    @property
    def d_max(self) -> float:
        return float(self.grid_size if self.max_distance is None else self.max_distance)

    @property
    def n_agents(self) -> int:
        return int(np.floor(self.density * self.grid_size ** 2 + 1e-9))


@dataclass(frozen=True)
class SchellingAgent:
    id: int
    color: str
    position: tuple[int, int]


@dataclass
class SchellingState:
    grid_size: int
    color: np.ndarray  # int8 index into COLORS
    pos: np.ndarray  # [n, 2] int64
    t: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def n_agents(self) -> int:
        return self.color.shape[0]

    def agent(self, i: int) -> SchellingAgent:
        if not 0 <= i < self.n_agents:
            raise KeyError(f"unknown agent id {i}")
        return SchellingAgent(i, COLORS[self.color[i]], (int(self.pos[i, 0]), int(self.pos[i, 1])))

    def copy(self) -> "SchellingState":
        return SchellingState(self.grid_size, self.color.copy(), self.pos.copy(), self.t)

    def occupancy(self) -> np.ndarray:
        occ = np.full((self.grid_size, self.grid_size), -1, dtype=np.int64)
        occ[self.pos[:, 0], self.pos[:, 1]] = np.arange(self.n_agents)
        return occ


def schelling_init(params: SchellingParams, rng: np.random.Generator) -> SchellingState:
    L, n = params.grid_size, params.n_agents
    cells = rng.choice(L * L, size=n, replace=False)
    color = np.zeros(n, dtype=np.int8)
    color[n // 2:] = 1
    color = rng.permutation(color)
    pos = np.stack([cells // L, cells % L], axis=1).astype(np.int64)
    return SchellingState(L, color, pos, 0)


def similarity_ratios(state: SchellingState) -> np.ndarray:
    """Same-colour fraction of Moore neighbours for every agent (0 when isolated)."""
    L = state.grid_size
    counts = neighbourhood_sum(cell_counts(state.pos, state.color, L, 2), MOORE)
    x, y = state.pos[:, 0], state.pos[:, 1]
    same = counts[x, y, state.color]
    total = counts[x, y].sum(axis=1)
    return np.divide(same, total, out=np.zeros(state.n_agents), where=total > 0)


def happy_mask(state: SchellingState, tolerance: float) -> np.ndarray:
    return similarity_ratios(state) >= tolerance


def schelling_similarity(state: SchellingState, agent_id: int, tolerance: float) -> tuple[float, bool]:
    state.agent(agent_id)
    r = float(similarity_ratios(state)[agent_id])
    return r, r >= tolerance


def schelling_relocate(state: SchellingState, agent_id: int, params: SchellingParams,
                       rng: np.random.Generator, occupancy: np.ndarray | None = None,
                       chunk: int = 8) -> tuple[int, int]:
    """Trial-and-error search for an empty cell; returns the new position.

    ``occupancy`` (agent id per cell, -1 if empty) is updated in place when
    given, so sequential callers see earlier moves.
    """
    L = params.grid_size
    occ = state.occupancy() if occupancy is None else occupancy
    x0, y0 = int(state.pos[agent_id, 0]), int(state.pos[agent_id, 1])
    remaining = params.max_trials
    while remaining > 0:
        k = min(chunk, remaining)
        remaining -= k
        theta = rng.uniform(0.0, 2.0 * np.pi, size=k)
        d = rng.uniform(0.0, params.d_max, size=k)
        xs = (x0 + np.floor(d * np.cos(theta)).astype(np.int64)) % L
        ys = (y0 + np.floor(d * np.sin(theta)).astype(np.int64)) % L
        occupant = occ[xs, ys]
        free = np.flatnonzero((occupant == -1) | (occupant == agent_id))
        if free.size:
            nx, ny = int(xs[free[0]]), int(ys[free[0]])
            occ[x0, y0] = -1
            occ[nx, ny] = agent_id
            return nx, ny
    return x0, y0


def schelling_step(state: SchellingState, params: SchellingParams,
                   rng: np.random.Generator) -> tuple[SchellingState, bool]:
    """One synchronous sweep. Returns ``(next_state, converged)``.

    Unhappiness is judged on the time-t configuration; unhappy agents then
    move in ascending id order against an occupancy map updated as each move
    commits.
    """
    unhappy = np.flatnonzero(~happy_mask(state, params.tolerance))
    nxt = state.copy()
    nxt.t = state.t + 1
    if unhappy.size == 0:
        return nxt, True
    occ = state.occupancy()
    for i in unhappy:
        nxt.pos[i] = schelling_relocate(state, int(i), params, rng, occ)
    return nxt, False


class SchellingEngine:
    kind = "schelling"

    def __init__(self, params: SchellingParams):
        self.params = params

    def initial_state(self, rng: np.random.Generator) -> SchellingState:
        return schelling_init(self.params, rng)

    def step(self, state: SchellingState, rng: np.random.Generator) -> SchellingState:
        return schelling_step(state, self.params, rng)[0]

    def is_terminal(self, state: SchellingState) -> bool:
        return bool(happy_mask(state, self.params.tolerance).all())

    def macro_stats(self, state: SchellingState) -> dict[str, int]:
        return macro_stats(state, self.params.tolerance)


def macro_stats(state: SchellingState, tolerance: float) -> dict[str, int]:
    return {"happy": int(happy_mask(state, tolerance).sum())}
