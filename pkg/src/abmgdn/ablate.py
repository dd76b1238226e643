"""The two ablated baselines.

* diffusion-only: the GDN denoiser, with the graph term of the condition
  replaced by an MLP over the flat concatenation of every agent's encoded
  state (ascending id order, agent count frozen at creation).
* gnn-only: the message-passing front end plus a deterministic regression
  head trained with MSE; no diffusion.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .encode import FeatureCodec, build_graph
from .gdn.model import GdnConfig, GdnModel, GraphBatch, MessagePassing, default_aggregation
from .gdn.train import TrainConfig, TrainingError, train
from .nn import MLP, Adam, Module, Tensor, mse_loss, no_grad
from .ramify import RamificationDataset, training_pairs
from .seeding import derive_rng

ABLATIONS = ("diffusion-only", "gnn-only")
PAPER_HEAD = (32, 64, 128, 128, 64, 32)


# ---- diffusion-only ----------------------------------------------------------

def diffusion_only_model(codec: FeatureCodec, n_agents: int, cfg: GdnConfig | None = None, rng=None) -> GdnModel:
    return GdnModel(codec, cfg, rng, context="flat", n_agents=n_agents)


def flat_condition(state, model: GdnModel) -> np.ndarray:
    """The flat-context condition component ``[1, cond_dim]`` for one system."""
    if model.context.kind != "flat":
        raise TypeError("flat_condition needs a diffusion-only model")
    Z = model.codec.encode(state)
    with no_grad():
        return model.context.mlp(Tensor(model.context.flat_input(Z, 1))).data


# ---- gnn-only ----------------------------------------------------------------

@dataclass(frozen=True)
class GnnOnlyConfig:
    gnn_hidden: tuple = (32, 64, 128)
    embed_dim: int = 256
    head: tuple = PAPER_HEAD
    slope: float = 0.1
    aggregation: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gnn_hidden"], d["head"] = list(self.gnn_hidden), list(self.head)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GnnOnlyConfig":
        d = dict(d)
        d["gnn_hidden"], d["head"] = tuple(d["gnn_hidden"]), tuple(d["head"])
        return cls(**d)


class GnnOnlyModel(Module):
    kind = "gnn-only"

    def __init__(self, codec: FeatureCodec, cfg: GnnOnlyConfig | None = None, rng=None):
        cfg = cfg or GnnOnlyConfig()
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.codec = codec
        self.cfg = cfg
        self.aggregation = cfg.aggregation or default_aggregation(codec.model)
        self.gnn = MessagePassing(codec.state_dim, cfg.gnn_hidden, cfg.embed_dim, self.aggregation, rng, cfg.slope)
        self.head = MLP([cfg.embed_dim, *cfg.head, codec.state_dim], rng, "xavier-uniform", cfg.slope)

    def forward(self, Z, graph) -> Tensor:
        return self.head(self.gnn(Z, graph))

    def predict_features(self, states: list) -> np.ndarray:
        Z = np.concatenate([self.codec.encode(s) for s in states])
        graph = GraphBatch.union([build_graph(s, self.codec.model) for s in states])
        with no_grad():
            return self.forward(Tensor(Z), graph).data

    def predict(self, states: list) -> list:
        """Decoded next states (binning / argmax through the shared codec)."""
        out = self.predict_features(states)
        nxt, k = [], 0
        for s in states:
            block = out[k:k + s.n_agents]
            k += s.n_agents
            nxt.append(self.codec.decode_dynamic(block[:, self.codec.dynamic_slice], s))
        return nxt


def gnn_only_predict(state, model: GnnOnlyModel):
    return model.predict([state])[0]


@dataclass(frozen=True)
class GnnOnlyTrainConfig:
    epochs: int = 100
    lr: float = 2e-5
    batch_size: int = 16
    seed: int = 0
    max_steps: int | None = None

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def train_gnn_only(model: GnnOnlyModel, dataset: RamificationDataset, cfg: GnnOnlyTrainConfig) -> list[float]:
    """MSE on full encoded next states; mini-batches of ``batch_size`` (t, r) graphs."""
    pairs = training_pairs(dataset)
    opt = Adam(model.parameters(), cfg.lr)
    Zs = {t: model.codec.encode(dataset.main[t]) for t in range(dataset.T)}
    graphs = {t: build_graph(dataset.main[t], model.codec.model) for t in range(dataset.T)}
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        order = derive_rng(cfg.seed, "gnn-only/order", epoch).permutation(len(pairs))
        for start in range(0, len(order), cfg.batch_size):
            chunk = pairs[order[start:start + cfg.batch_size]]
            Z = np.concatenate([Zs[int(t)] for t, _ in chunk])
            Y = np.concatenate([model.codec.encode(dataset.sibling(int(t), int(r))) for t, r in chunk])
            graph = GraphBatch.union([graphs[int(t)] for t, _ in chunk])
            opt.zero_grad()
            loss = mse_loss(model(Tensor(Z), graph), Tensor(Y))
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
            if cfg.max_steps is not None and len(losses) >= cfg.max_steps:
                return losses
    return losses


def train_ablation(kind: str, dataset: RamificationDataset, config, model_cfg=None, rng=None):
    """Build and train one ablation on the same tuple stream as the GDN."""
    codec = FeatureCodec(dataset.model, dataset.params["grid_size"])
    if kind == "diffusion-only":
        model = diffusion_only_model(codec, dataset.n_agents, model_cfg, rng)
        losses = train(model, dataset, config if isinstance(config, TrainConfig) else TrainConfig(**config))
    elif kind == "gnn-only":
        model = GnnOnlyModel(codec, model_cfg, rng)
        cfg = config if isinstance(config, GnnOnlyTrainConfig) else GnnOnlyTrainConfig(**config)
        losses = train_gnn_only(model, dataset, cfg)
    else:
        raise ValueError(f"unknown ablation {kind!r}; expected one of {ABLATIONS}")
    return model, losses
