"""Predator-prey life-phase model on an L x L torus.

Alive agents draw die / move / turn-pregnant from the transition-matrix row
picked by their kind and whether an opposite-kind agent sits in a Von
Neumann neighbour cell. Pregnant agents give birth (every Unborn child of a
pregnant parent is placed next to it) and return to Alive; Dead stays Dead.
All decisions read the time-t configuration and commit together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import OFF_GRID, VON_NEUMANN, cell_counts, neighbourhood_sum

PREY, PREDATOR = 0, 1
KINDS = ("prey", "predator")
UNBORN, ALIVE, PREGNANT, DEAD = 0, 1, 2, 3
PHASES = ("unborn", "alive", "pregnant", "dead")

OUTCOMES = ("die", "move", "turn_pregnant", "turn_alive", "stay_dead", "stay_unborn")
ROWS = (
    "alive_predator_with_prey",
    "alive_predator_no_prey",
    "alive_prey_with_predator",
    "alive_prey_no_predator",
    "pregnant",
    "dead",
    "unborn_parent_not_pregnant",
)

_DETERMINISTIC_ROWS = {4: 3, 5: 4, 6: 5}

PSI = {
    "psi1": [[0.15, 0.45, 0.40], [0.25, 0.55, 0.20], [0.30, 0.45, 0.25], [0.15, 0.40, 0.45]],
    "psi2": [[0.35, 0.45, 0.20], [0.25, 0.60, 0.15], [0.45, 0.50, 0.05], [0.35, 0.35, 0.30]],
    "psi3": [[0.15, 0.30, 0.55], [0.30, 0.55, 0.15], [0.70, 0.20, 0.10], [0.10, 0.40, 0.50]],
    "psi4": [[0.15, 0.35, 0.50], [0.25, 0.45, 0.30], [0.45, 0.40, 0.15], [0.30, 0.40, 0.30]],
}


def transition_matrix(alive_rows) -> np.ndarray:
    """Full 7 x 6 matrix from the four (die, move, pregnant) Alive rows."""
    psi = np.zeros((7, 6))
    psi[:4, :3] = np.asarray(alive_rows, dtype=np.float64)
    for row, col in _DETERMINISTIC_ROWS.items():
        psi[row, col] = 1.0
    return psi


def preset_matrix(name: str) -> np.ndarray:
    try:
        return transition_matrix(PSI[name.lower()])
    except KeyError:
        raise KeyError(f"unknown transition matrix preset {name!r}; known: {sorted(PSI)}") from None


def validate_matrix(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=np.float64)
    if psi.shape != (7, 6):
        raise ValueError(f"transition matrix must be 7 x 6, got {psi.shape}")
    if ((psi < 0) | (psi > 1)).any():
        raise ValueError("transition probabilities must lie in [0, 1]")
    if not np.allclose(psi.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("every transition-matrix row must sum to 1")
    if psi[:4, 3:].any():
        raise ValueError("Alive rows may only use the die / move / turn-pregnant outcomes")
    for row, col in _DETERMINISTIC_ROWS.items():
        if psi[row, col] != 1.0:
            raise ValueError(f"row {ROWS[row]!r} must be deterministic")
    return psi


@dataclass(frozen=True)
class PredPreyParams:
    grid_size: int = 32
    psi: tuple = field(default_factory=lambda: tuple(map(tuple, preset_matrix("psi1"))))
    alive_density: float = 0.3
    n_agents: int = 2048
    max_steps: int = 35
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "psi", tuple(map(tuple, validate_matrix(self.psi))))
        if self.grid_size < 3:
            raise ValueError("grid size must be at least 3")
        if not 0 < self.alive_density <= 1:
            raise ValueError("alive density must lie in (0, 1]")
        if self.n_alive > self.n_agents:
            raise ValueError("more initially Alive agents than agents")

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.psi)

    @property
    def n_alive(self) -> int:
        return int(round(self.alive_density * self.grid_size ** 2))


@dataclass(frozen=True)
class PredPreyAgent:
    id: int
    kind: str
    phase: str
    position: tuple[int, int] | None
    parent: int | None


@dataclass
class PredPreyState:
    grid_size: int
    kind: np.ndarray  # int8
    phase: np.ndarray  # int8
    pos: np.ndarray  # [n, 2] int64, OFF_GRID when not on the grid
    parent: np.ndarray  # int64, -1 when no parent
    t: int = 0

    @property
    def n_agents(self) -> int:
        return self.kind.shape[0]

    @property
    def on_grid(self) -> np.ndarray:
        return (self.phase == ALIVE) | (self.phase == PREGNANT)

    def agent(self, i: int) -> PredPreyAgent:
        if not 0 <= i < self.n_agents:
            raise KeyError(f"unknown agent id {i}")
        on = self.pos[i, 0] != OFF_GRID
        return PredPreyAgent(i, KINDS[self.kind[i]], PHASES[self.phase[i]],
                             (int(self.pos[i, 0]), int(self.pos[i, 1])) if on else None,
                             int(self.parent[i]) if self.parent[i] >= 0 else None)

    def copy(self) -> "PredPreyState":
        return PredPreyState(self.grid_size, self.kind.copy(), self.phase.copy(),
                             self.pos.copy(), self.parent.copy(), self.t)


def predprey_init(params: PredPreyParams, rng: np.random.Generator) -> PredPreyState:
    L, n = params.grid_size, params.n_agents
    kind = np.zeros(n, dtype=np.int8)
    kind[n // 2:] = PREDATOR
    kind = rng.permutation(kind)
    alive = rng.choice(n, size=params.n_alive, replace=False)
    phase = np.full(n, UNBORN, dtype=np.int8)
    phase[alive] = ALIVE
    pos = np.full((n, 2), OFF_GRID, dtype=np.int64)
    cells = rng.choice(L * L, size=alive.size, replace=False)
    pos[alive, 0] = cells // L
    pos[alive, 1] = cells % L
    parent = np.full(n, -1, dtype=np.int64)
    for k in (PREY, PREDATOR):
        # parents are drawn uniformly among the same-kind agents that start Alive
        candidates = np.flatnonzero((kind == k) & (phase == ALIVE))
        children = np.flatnonzero((phase == UNBORN) & (kind == k))
        if children.size == 0:
            continue
        if candidates.size == 0:
            raise ValueError(f"no Alive {KINDS[k]} available as parent for Unborn agents")
        parent[children] = candidates[rng.integers(candidates.size, size=children.size)]
    return PredPreyState(L, kind, phase, pos, parent, 0)


def _row_index(kind: np.ndarray, opposite_near: np.ndarray) -> np.ndarray:
    return np.where(kind == PREDATOR, np.where(opposite_near, 0, 1), np.where(opposite_near, 2, 3))


def alive_rows(state: PredPreyState) -> np.ndarray:
    """Matrix row for every agent (meaningful for Alive agents only)."""
    L = state.grid_size
    on = state.on_grid
    pos = np.where(on[:, None], state.pos, OFF_GRID)
    counts = neighbourhood_sum(cell_counts(pos, state.kind, L, 2), VON_NEUMANN)
    x = np.where(on, state.pos[:, 0], 0)
    y = np.where(on, state.pos[:, 1], 0)
    opposite = counts[x, y, 1 - state.kind] > 0
    return _row_index(state.kind, opposite & on)


def sample_outcomes(rows: np.ndarray, psi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Categorical draw of an outcome column for each given matrix row."""
    cum = np.cumsum(psi, axis=1)[rows]
    u = rng.random(rows.size)
    return np.minimum((u[:, None] >= cum).sum(axis=1), psi.shape[1] - 1)


def _vn_step(pos: np.ndarray, L: int, rng: np.random.Generator) -> np.ndarray:
    d = np.asarray(VON_NEUMANN)[rng.integers(4, size=pos.shape[0])]
    return (pos + d) % L


def predprey_step(state: PredPreyState, params: PredPreyParams,
                  rng: np.random.Generator) -> PredPreyState:
    L = state.grid_size
    psi = params.matrix
    nxt = state.copy()
    nxt.t = state.t + 1

    alive = np.flatnonzero(state.phase == ALIVE)
    outcome = sample_outcomes(alive_rows(state)[alive], psi, rng)
    die = alive[outcome == 0]
    move = alive[outcome == 1]
    preg = alive[outcome == 2]
    nxt.phase[die] = DEAD
    nxt.pos[die] = OFF_GRID
    nxt.pos[move] = _vn_step(state.pos[move], L, rng)
    nxt.phase[preg] = PREGNANT

    nxt.phase[state.phase == PREGNANT] = ALIVE

    unborn = np.flatnonzero(state.phase == UNBORN)
    born = unborn[state.phase[state.parent[unborn]] == PREGNANT]
    nxt.phase[born] = ALIVE
    nxt.pos[born] = _vn_step(state.pos[state.parent[born]], L, rng)
    return nxt


def macro_stats(state: PredPreyState) -> dict[str, int]:
    active = state.on_grid
    return {
        "prey_active": int((active & (state.kind == PREY)).sum()),
        "predator_active": int((active & (state.kind == PREDATOR)).sum()),
    }


class PredPreyEngine:
    kind = "predprey"

    def __init__(self, params: PredPreyParams):
        self.params = params

    def initial_state(self, rng: np.random.Generator) -> PredPreyState:
        return predprey_init(self.params, rng)

    def step(self, state: PredPreyState, rng: np.random.Generator) -> PredPreyState:
        return predprey_step(state, self.params, rng)

    def is_terminal(self, state: PredPreyState) -> bool:
        return not state.on_grid.any()

    def macro_stats(self, state: PredPreyState) -> dict[str, int]:
        return macro_stats(state)
