"""Graph Diffusion Network weights.

Per agent i at time t:

    g_i  = f_omega([Z_i, AGG_{j in N(i)} Z_j])                 (sum or mean; 0 if no neighbours)
    c_i  = MLP_state(Z_i) + MLP_graph(g_i) + MLP_time(emb(tau))
    eps  = Denoiser(latent_i, c_i)

The denoiser projects the dynamic features to the first hidden width, then
runs one condition block per hidden width:

    a = Linear(LayerNorm(h));  a = a + Linear_c(Act(c));  h' = a + Linear(Act(a))

and projects back to the dynamic dimension.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..encode import FeatureCodec, InteractionGraph, build_graph
from ..nn import (
    MLP,
    DimensionError,
    LayerNorm,
    Linear,
    Module,
    Tensor,
    concat,
    gather_rows,
    leaky_relu,
    mul,
    segment_sum,
)
from .embedding import sinusoidal_embedding
from .schedule import NoiseSchedule, cosine_schedule

PAPER_TRUNK = (128, 256, 1024, 1024, 256, 128)


@dataclass(frozen=True)
class GdnConfig:
    gnn_hidden: tuple = (32, 64, 128)
    embed_dim: int = 256
    cond_dim: int = 256
    time_dim: int = 256
    trunk: tuple = PAPER_TRUNK
    slope: float = 0.1
    aggregation: str | None = None  # None -> model default (sum PredPrey, mean Schelling)
    tau_max: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sigma_mode: str = "posterior"
    cond_init: str = "xavier-uniform"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gnn_hidden"] = list(self.gnn_hidden)
        d["trunk"] = list(self.trunk)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GdnConfig":
        d = dict(d)
        d["gnn_hidden"] = tuple(d["gnn_hidden"])
        d["trunk"] = tuple(d["trunk"])
        return cls(**d)


def default_aggregation(model: str) -> str:
    return "sum" if model == "predprey" else "mean"


# ---- graph batching ----------------------------------------------------------

@dataclass(frozen=True)
class GraphBatch:
    """Disjoint union of several systems' graphs, node blocks stacked in order."""

    src: np.ndarray
    dst: np.ndarray
    n_nodes: int
    block: np.ndarray  # system index per node

    @classmethod
    def union(cls, graphs: list[InteractionGraph]) -> "GraphBatch":
        offs = np.cumsum([0] + [g.n_nodes for g in graphs])
        src = np.concatenate([g.src + o for g, o in zip(graphs, offs)]) if graphs else np.zeros(0, np.int64)
        dst = np.concatenate([g.dst + o for g, o in zip(graphs, offs)]) if graphs else np.zeros(0, np.int64)
        block = np.repeat(np.arange(len(graphs)), [g.n_nodes for g in graphs])
        return cls(src.astype(np.int64), dst.astype(np.int64), int(offs[-1]), block)


class MessagePassing(Module):
    """f_omega over [Z_i, aggregate of neighbour states]; Kaiming-uniform init."""

    def __init__(self, state_dim: int, hidden, out_dim: int, aggregation: str,
                 rng: np.random.Generator, slope: float = 0.1):
        if aggregation not in ("sum", "mean"):
            raise ValueError(f"aggregation must be 'sum' or 'mean', got {aggregation!r}")
        self.state_dim = state_dim
        self.aggregation = aggregation
        self.mlp = MLP([2 * state_dim, *hidden, out_dim], rng, "kaiming-uniform", slope)

    def aggregate(self, Z, graph) -> Tensor:
        Z = Z if isinstance(Z, Tensor) else Tensor(Z)
        agg = segment_sum(gather_rows(Z, graph.src), graph.dst, graph.n_nodes)
        if self.aggregation == "mean":
            deg = np.bincount(graph.dst, minlength=graph.n_nodes).astype(np.float64)
            agg = mul(agg, Tensor((1.0 / np.maximum(deg, 1.0))[:, None]))
        return agg

    def forward(self, Z, graph) -> Tensor:
        Z = Z if isinstance(Z, Tensor) else Tensor(Z)
        if Z.shape[1] != self.state_dim:
            raise DimensionError(f"GNN expects {self.state_dim} features, got {Z.shape[1]}")
        return self.mlp(concat([Z, self.aggregate(Z, graph)], axis=1))


class ConditionBlock(Module):
    def __init__(self, in_dim: int, out_dim: int, cond_dim: int, rng, slope: float = 0.1):
        self.norm = LayerNorm(in_dim)
        self.lin1 = Linear(in_dim, out_dim, rng)
        self.cond = Linear(cond_dim, out_dim, rng)
        self.lin2 = Linear(out_dim, out_dim, rng)
        self.slope = slope

    def forward(self, h, c) -> Tensor:
        a = self.lin1(self.norm(h)) + self.cond(leaky_relu(c, self.slope))
        return a + self.lin2(leaky_relu(a, self.slope))


class Denoiser(Module):
    def __init__(self, dyn_dim: int, trunk, cond_dim: int, rng, slope: float = 0.1):
        self.dyn_dim = dyn_dim
        self.inp = Linear(dyn_dim, trunk[0], rng)
        dims = [trunk[0], *trunk]
        self.blocks = [ConditionBlock(a, b, cond_dim, rng, slope) for a, b in zip(dims[:-1], dims[1:])]
        self.out = Linear(trunk[-1], dyn_dim, rng)
        self.slope = slope

    def forward(self, latent, c) -> Tensor:
        latent = latent if isinstance(latent, Tensor) else Tensor(latent)
        if latent.shape[1] != self.dyn_dim:
            raise DimensionError(f"denoiser expects {self.dyn_dim} features, got {latent.shape[1]}")
        h = self.inp(latent)
        for blk in self.blocks:
            h = blk(h, c)
        return self.out(leaky_relu(h, self.slope))


# ---- context embedders -------------------------------------------------------

class GraphContext(Module):
    """g = GNN(Z, graph) then MLP_graph(g)."""

    kind = "graph"
    uses_graph = True

    def __init__(self, codec: FeatureCodec, cfg: GdnConfig, aggregation: str, rng):
        self.gnn = MessagePassing(codec.state_dim, cfg.gnn_hidden, cfg.embed_dim, aggregation, rng, cfg.slope)
        self.mlp = MLP([cfg.embed_dim, cfg.cond_dim, cfg.cond_dim, cfg.cond_dim], rng, cfg.cond_init, cfg.slope)

    def omega(self) -> dict[str, Tensor]:
        return {"gnn." + k: v for k, v in self.gnn.named_parameters()}

    def forward(self, Z, graph: GraphBatch, n_systems: int) -> Tensor:
        return self.mlp(self.gnn(Z, graph))


class FlatContext(Module):
    """MLP over the concatenation of all agents' states in ascending id order."""

    kind = "flat"
    uses_graph = False

    def __init__(self, codec: FeatureCodec, cfg: GdnConfig, n_agents: int, rng):
        self.n_agents = n_agents
        self.state_dim = codec.state_dim
        self.mlp = MLP([n_agents * codec.state_dim, cfg.cond_dim, cfg.cond_dim, cfg.cond_dim], rng,
                       cfg.cond_init, cfg.slope)

    def omega(self) -> dict[str, Tensor]:
        return {}

    def flat_input(self, Z: np.ndarray, n_systems: int) -> np.ndarray:
        Z = np.asarray(Z.data if isinstance(Z, Tensor) else Z)
        if Z.shape[0] != n_systems * self.n_agents:
            raise DimensionError(f"flat context built for {self.n_agents} agents per system, "
                                 f"got {Z.shape[0]} rows for {n_systems} systems")
        return Z.reshape(n_systems, self.n_agents * self.state_dim)

    def forward(self, Z, graph, n_systems: int) -> Tensor:
        per_system = self.mlp(Tensor(self.flat_input(Z, n_systems)))
        return gather_rows(per_system, np.repeat(np.arange(n_systems), self.n_agents))


# ---- full model --------------------------------------------------------------

class GdnModel(Module):
    """Context embedder + condition MLPs + conditioned denoiser + schedule + codec."""

    def __init__(self, codec: FeatureCodec, cfg: GdnConfig | None = None, rng=None,
                 context: str = "graph", n_agents: int | None = None):
        cfg = cfg or GdnConfig()
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.codec = codec
        self.cfg = cfg
        self.aggregation = cfg.aggregation or default_aggregation(codec.model)
        if context == "graph":
            self.context = GraphContext(codec, cfg, self.aggregation, rng)
        elif context == "flat":
            if n_agents is None:
                raise ValueError("flat context needs the agent count")
            self.context = FlatContext(codec, cfg, n_agents, rng)
        else:
            raise ValueError(f"unknown context {context!r}")
        self.state_mlp = MLP([codec.state_dim, cfg.cond_dim, cfg.cond_dim, cfg.cond_dim], rng, cfg.cond_init, cfg.slope)
        self.time_mlp = MLP([cfg.time_dim, cfg.cond_dim, cfg.cond_dim], rng, cfg.cond_init, cfg.slope)
        self.denoiser = Denoiser(codec.dynamic_dim, cfg.trunk, cfg.cond_dim, rng, cfg.slope)
        self.schedule: NoiseSchedule = cosine_schedule(cfg.tau_max, cfg.beta_start, cfg.beta_end, cfg.sigma_mode)

    @property
    def kind(self) -> str:
        return "gdn" if self.context.kind == "graph" else "diffusion-only"

    def omega(self) -> dict[str, Tensor]:
        """GNN weights (empty for the flat ablation)."""
        return {"context." + k: v for k, v in self.context.omega().items()}

    def phi(self) -> dict[str, Tensor]:
        om = self.omega()
        return {k: v for k, v in self.parameters().items() if k not in om}

    # pieces
    def static_condition(self, Z, graph, n_systems: int = 1) -> Tensor:
        """MLP_state(Z) + MLP_graph(g): the tau-independent part of c."""
        Zt = Z if isinstance(Z, Tensor) else Tensor(Z)
        return self.state_mlp(Zt) + self.context(Zt, graph, n_systems)

    def time_condition(self, tau: int) -> Tensor:
        return self.time_mlp(Tensor(sinusoidal_embedding(float(tau), self.cfg.time_dim)[None, :]))

    def condition(self, Z, graph, tau: int, n_systems: int = 1) -> Tensor:
        return self.static_condition(Z, graph, n_systems) + self.time_condition(tau)

    def eps(self, latent, c) -> Tensor:
        return self.denoiser(latent, c)


@dataclass
class Prepared:
    """Encoded states and graph union for a batch of systems."""

    Z: np.ndarray
    graph: GraphBatch | None
    n_systems: int
    templates: list = field(default_factory=list)


def prepare(model: GdnModel, states: list) -> Prepared:
    Z = np.concatenate([model.codec.encode(s) for s in states], axis=0)
    graph = GraphBatch.union([build_graph(s, model.codec.model) for s in states]) if model.context.uses_graph else None
    return Prepared(Z, graph, len(states), list(states))
