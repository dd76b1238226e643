"""Synthetic Bernoulli oracle for conditional-distribution recovery.

Each system is a fresh random layout of isolated agents, pairs and L-shaped
triples placed in separate 2 x 2 blocks on a torus, so an agent's Moore
degree (0, 1 or 2) is set by the layout and not by its id or position. Every
agent then jumps to cell A = (0, 0) with probability ``p[degree]`` and to
B = (L-1, L-1) otherwise. Only the interaction graph reveals the degree.
"""

from __future__ import annotations

import numpy as np

from .abm.schelling import SchellingParams, SchellingState
from .abm import params_to_dict
from .ramify import RamificationDataset, SiblingBlock
from .seeding import derive_rng

DEFAULT_P = (0.1, 0.5, 0.9)
_SHAPES = {
    1: [[(0, 0)]],
    2: [[(0, 0), (0, 1)], [(0, 0), (1, 0)], [(0, 0), (1, 1)], [(0, 1), (1, 0)]],
    3: [[(0, 0), (0, 1), (1, 0)], [(0, 0), (0, 1), (1, 1)], [(0, 0), (1, 0), (1, 1)], [(0, 1), (1, 0), (1, 1)]],
}


class BernoulliOracle:
    def __init__(self, grid_size: int = 21, clusters=(8, 8, 8), p=DEFAULT_P):
        if grid_size % 3:
            raise ValueError("grid size must be a multiple of 3 (2 x 2 blocks plus a gap)")
        slots = (grid_size // 3) ** 2
        if sum(clusters) > slots:
            raise ValueError(f"{sum(clusters)} clusters do not fit in {slots} slots")
        self.grid_size = grid_size
        self.clusters = tuple(clusters)
        self.p = tuple(p)
        self.n_agents = sum((k + 1) * c for k, c in enumerate(self.clusters))

    def layout(self, rng: np.random.Generator, t: int = 0) -> SchellingState:
        """Random layout; agent ids run singles, pairs, triples (degree 0, 1, 2)."""
        side = self.grid_size // 3
        slots = rng.permutation(side * side)
        cells = []
        k = 0
        for size, count in zip((1, 2, 3), self.clusters):
            for _ in range(count):
                ax, ay = divmod(int(slots[k]), side)
                shape = _SHAPES[size][rng.integers(len(_SHAPES[size]))]
                cells += [(3 * ax + dx, 3 * ay + dy) for dx, dy in shape]
                k += 1
        color = rng.integers(2, size=len(cells)).astype(np.int8)
        return SchellingState(self.grid_size, color, np.array(cells, dtype=np.int64), t)

    def degrees(self) -> np.ndarray:
        return np.repeat([0, 1, 2], [(k + 1) * c for k, c in enumerate(self.clusters)])

    def probabilities(self) -> np.ndarray:
        return np.asarray(self.p)[self.degrees()]

    def cells(self) -> tuple[tuple[int, int], tuple[int, int]]:
        return (0, 0), (self.grid_size - 1, self.grid_size - 1)

    def jump(self, rng: np.random.Generator, R: int) -> np.ndarray:
        """``[R, n, 2]`` target positions."""
        a, b = self.cells()
        to_a = rng.random((R, self.n_agents)) < self.probabilities()
        return np.where(to_a[..., None], np.array(a), np.array(b)).astype(np.int64)

    def dataset(self, T: int, R: int, seed: int) -> RamificationDataset:
        """T independent layouts, each with R sampled successors.

        ``main[t+1]`` is the layout conditioning step t+1 (a fresh layout,
        not a successor); it is only ever used as conditioning context.
        """
        main = [self.layout(derive_rng(seed, "oracle/layout", t), t) for t in range(T + 1)]
        blocks = [SiblingBlock(self.jump(derive_rng(seed, "oracle/jump", t), R).astype(np.int16), None)
                  for t in range(T)]
        params = params_to_dict(SchellingParams(grid_size=self.grid_size, density=self.n_agents / self.grid_size ** 2))
        return RamificationDataset("schelling", params, seed, R, main, blocks, tag="oracle",
                                   requested_T=T, meta={"oracle": {"p": list(self.p), "clusters": list(self.clusters)}})

    def went_to_a(self, pos: np.ndarray) -> np.ndarray:
        """Classify decoded positions by the nearer target cell."""
        return np.asarray(pos).sum(axis=-1) < self.grid_size - 1


def conditional_frequencies(oracle: BernoulliOracle, to_a: np.ndarray) -> np.ndarray:
    """Pooled frequency of A per degree class; ``to_a`` is ``[..., n_agents]``."""
    deg = oracle.degrees()
    flat = to_a.reshape(-1, oracle.n_agents)
    return np.array([flat[:, deg == d].mean() for d in range(3)])


def conditional_emd(oracle: BernoulliOracle, to_a: np.ndarray) -> float:
    """Mean over agents of |freq_i(A) - p_i| (categorical EMD of a two-point law)."""
    flat = to_a.reshape(-1, oracle.n_agents)
    return float(np.abs(flat.mean(axis=0) - oracle.probabilities()).mean())
