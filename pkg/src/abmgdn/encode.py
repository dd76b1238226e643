"""Feature codec between engine states and model vectors, and interaction graphs.

Encoded agent layout is ``[one-hot static | one-hot categorical dynamic |
scaled numeric dynamic]``:

* Schelling: ``[colour(2) | x, y]`` -> 4 features, dynamic = ``{x, y}``
* PredPrey:  ``[kind(2) | phase(4) | x, y]`` -> 8 features, dynamic = ``{phase, x, y}``

Coordinates map affinely onto [-1, 1]; off-grid agents encode them as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .abm import predprey as pp
from .abm import schelling as sc
from .abm.grid import MOORE, OFF_GRID, VON_NEUMANN, neighbour_pairs


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureCodec:
    model: str
    grid_size: int

    def __post_init__(self):
        if self.model not in ("schelling", "predprey"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.grid_size < 2:
            raise ValueError("grid size must be at least 2")

    # layout ---------------------------------------------------------------
    @property
    def static_vocab(self) -> tuple[str, ...]:
        return sc.COLORS if self.model == "schelling" else pp.KINDS

    @property
    def phase_vocab(self) -> tuple[str, ...]:
        return () if self.model == "schelling" else pp.PHASES

    @property
    def state_dim(self) -> int:
        return len(self.static_vocab) + len(self.phase_vocab) + 2

    @property
    def dynamic_slice(self) -> slice:
        return slice(len(self.static_vocab), self.state_dim)

    @property
    def dynamic_dim(self) -> int:
        return self.state_dim - len(self.static_vocab)

    @property
    def scale(self) -> float:
        return 2.0 / (self.grid_size - 1)

    @property
    def offset(self) -> float:
        return -1.0

    def descriptor(self) -> dict:
        features = [f"static:{v}" for v in self.static_vocab]
        features += [f"phase:{v}" for v in self.phase_vocab] + ["x", "y"]
        return {"model": self.model, "grid_size": self.grid_size, "features": features,
                "numeric_affine": {"scale": self.scale, "offset": self.offset},
                "dynamic": [self.dynamic_slice.start, self.dynamic_slice.stop]}

    @classmethod
    def from_descriptor(cls, d: dict) -> "FeatureCodec":
        codec = cls(d["model"], int(d["grid_size"]))
        if codec.descriptor()["features"] != d["features"]:
            raise ValueError("codec descriptor does not match this feature layout")
        return codec

    @classmethod
    def for_state(cls, state) -> "FeatureCodec":
        model = "schelling" if isinstance(state, sc.SchellingState) else "predprey"
        return cls(model, state.grid_size)

    # numeric map ----------------------------------------------------------
    def scale_coord(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        return np.where(v == OFF_GRID, 0.0, v * self.scale + self.offset)

    def unscale_coord(self, u: np.ndarray) -> np.ndarray:
        return np.clip(np.rint((np.asarray(u) - self.offset) / self.scale), 0, self.grid_size - 1).astype(np.int64)

    # whole-system encode/decode -------------------------------------------
    def static_codes(self, state) -> np.ndarray:
        return state.color if self.model == "schelling" else state.kind

    def encode(self, state) -> np.ndarray:
        """``[n_agents, state_dim]`` feature matrix, rows in agent-id order."""
        n = state.n_agents
        out = np.zeros((n, self.state_dim))
        ns = len(self.static_vocab)
        out[np.arange(n), self.static_codes(state)] = 1.0
        if self.model == "predprey":
            out[np.arange(n), ns + state.phase] = 1.0
        out[:, -2:] = self.scale_coord(state.pos)
        return out

    def decode_dynamic(self, dyn: np.ndarray, template):
        """Next-time state from predicted dynamic features; static fields come from ``template``."""
        dyn = np.asarray(dyn, dtype=np.float64)
        if dyn.shape != (template.n_agents, self.dynamic_dim):
            raise DecodeError(f"expected dynamic block {(template.n_agents, self.dynamic_dim)}, got {dyn.shape}")
        if not np.isfinite(dyn).all():
            raise DecodeError("non-finite values in sampled features")
        pos = self.unscale_coord(dyn[:, -2:])
        nxt = template.copy()
        nxt.t = template.t + 1
        if self.model == "schelling":
            nxt.pos = pos
            return nxt
        phase = np.argmax(dyn[:, :4], axis=1).astype(np.int8)
        off = (phase == pp.DEAD) | (phase == pp.UNBORN)
        pos[off] = OFF_GRID
        nxt.phase = phase
        nxt.pos = pos
        return nxt

    def decode(self, Z: np.ndarray, template):
        """Full feature matrix back to a state (static block argmax'ed too)."""
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != self.state_dim:
            raise DecodeError(f"expected {self.state_dim} features per agent, got {Z.shape}")
        st = self.decode_dynamic(Z[:, self.dynamic_slice], template)
        st.t = template.t
        codes = np.argmax(Z[:, :len(self.static_vocab)], axis=1).astype(np.int8)
        if self.model == "schelling":
            st.color = codes
        else:
            st.kind = codes
        return st

    # single-agent view ----------------------------------------------------
    def encode_agent(self, agent) -> np.ndarray:
        v = np.zeros(self.state_dim)
        if self.model == "schelling":
            static, phase, position = agent.color, None, agent.position
        else:
            static, phase, position = agent.kind, agent.phase, agent.position
        try:
            v[self.static_vocab.index(static)] = 1.0
            if phase is not None:
                v[len(self.static_vocab) + self.phase_vocab.index(phase)] = 1.0
        except ValueError:
            raise ValueError(f"unknown category in {agent!r}") from None
        if position is not None:
            v[-2:] = self.scale_coord(np.asarray(position))
        return v

    def decode_agent(self, v: np.ndarray, agent_id: int = 0, parent: int | None = None):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.state_dim,):
            raise DecodeError(f"expected {self.state_dim} features, got {v.shape}")
        if not np.isfinite(v).all():
            raise DecodeError("non-finite values in feature vector")
        ns = len(self.static_vocab)
        static = self.static_vocab[int(np.argmax(v[:ns]))]
        xy = tuple(int(c) for c in self.unscale_coord(v[-2:]))
        if self.model == "schelling":
            return sc.SchellingAgent(agent_id, static, xy)
        phase = pp.PHASES[int(np.argmax(v[ns:ns + 4]))]
        if phase in ("dead", "unborn"):
            xy = None
        return pp.PredPreyAgent(agent_id, static, phase, xy, parent)


@dataclass(frozen=True)
class InteractionGraph:
    t: int
    n_nodes: int
    src: np.ndarray  # j
    dst: np.ndarray  # i, with j in N(i)

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_nodes)


def build_graph(state, model: str | None = None) -> InteractionGraph:
    """Moore occupancy edges (Schelling) or Von Neumann edges among on-grid
    agents plus parent -> child edges for Unborn agents (PredPrey)."""
    if model is None:
        model = "schelling" if isinstance(state, sc.SchellingState) else "predprey"
    L, n = state.grid_size, state.n_agents
    if model == "schelling":
        src, dst = neighbour_pairs(state.pos, np.ones(n, bool), L, MOORE)
    elif model == "predprey":
        src, dst = neighbour_pairs(state.pos, state.on_grid, L, VON_NEUMANN)
        unborn = np.flatnonzero((state.phase == pp.UNBORN) & (state.parent >= 0))
        if unborn.size:
            src = np.concatenate([src, state.parent[unborn]])
            dst = np.concatenate([dst, unborn])
            order = np.lexsort((src, dst))
            src, dst = src[order], dst[order]
    else:
        raise ValueError(f"unknown model {model!r}")
    return InteractionGraph(state.t, n, src.astype(np.int64), dst.astype(np.int64))
