"""Training loop: one (t, r) batch of all agents and one tau per optimizer step."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..nn import Adam, Tensor, mse_loss
from ..ramify import RamificationDataset, training_pairs
from ..seeding import derive_rng
from .model import GdnModel, Prepared, prepare

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr_diffusion: float = 1e-5
    lr_gnn: float | None = None  # None -> 2 x lr_diffusion
    seed: int = 0
    max_steps: int | None = None  # optional cap across all epochs
    include_main_branch: bool = False  # r = 0 as an extra target

    @property
    def gnn_lr(self) -> float:
        return 2.0 * self.lr_diffusion if self.lr_gnn is None else self.lr_gnn

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


class Optimizers:
    """Adam on phi (denoiser side) stepped before Adam on omega (GNN)."""

    def __init__(self, model: GdnModel, cfg: TrainConfig):
        self.phi = Adam(model.phi(), cfg.lr_diffusion)
        omega = model.omega()
        self.omega = Adam(omega, cfg.gnn_lr) if omega else None

    def zero_grad(self) -> None:
        self.phi.zero_grad()
        if self.omega:
            self.omega.zero_grad()

    def step(self) -> None:
        self.phi.step()
        if self.omega:
            self.omega.step()


def diffusion_loss(model: GdnModel, prep: Prepared, target_dyn: np.ndarray, tau: int,
                   eps: np.ndarray) -> Tensor:
    """Mean over agents (and features) of ||eps - eps_phi(noised target, c)||^2."""
    ab = model.schedule.alpha_bar[tau]
    latent = np.sqrt(ab) * target_dyn + np.sqrt(1.0 - ab) * eps
    c = model.condition(prep.Z, prep.graph, tau, prep.n_systems)
    return mse_loss(model.eps(Tensor(latent), c), Tensor(eps))


def train_step(model: GdnModel, opt: Optimizers, prep: Prepared, target_dyn: np.ndarray,
               rng: np.random.Generator, tau: int | None = None) -> float:
    tau = int(rng.integers(1, model.schedule.tau_max + 1)) if tau is None else tau
    eps = rng.standard_normal(target_dyn.shape)
    opt.zero_grad()
    loss = diffusion_loss(model, prep, target_dyn, tau, eps)
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at tau={tau}")
    loss.backward()
    opt.step()
    return value


class BatchCache:
    """Encoded conditioning states / graphs per t and encoded targets per (t, r)."""

    def __init__(self, model: GdnModel, dataset: RamificationDataset):
        self.model = model
        self.dataset = dataset
        self._prep: dict[int, Prepared] = {}

    def prepared(self, t: int) -> Prepared:
        if t not in self._prep:
            self._prep[t] = prepare(self.model, [self.dataset.main[t]])
        return self._prep[t]

    def target(self, t: int, r: int) -> np.ndarray:
        st = self.dataset.main[t + 1] if r == 0 else self.dataset.sibling(t, r)
        return self.model.codec.encode(st)[:, self.model.codec.dynamic_slice]


def epoch_pairs(dataset: RamificationDataset, cfg: TrainConfig) -> np.ndarray:
    pairs = training_pairs(dataset)
    if cfg.include_main_branch:
        pairs = np.concatenate([pairs, np.stack([np.arange(dataset.T), np.zeros(dataset.T, int)], 1)])
    return pairs


def train(model: GdnModel, dataset: RamificationDataset, cfg: TrainConfig,
          callback=None) -> list[float]:
    """Each epoch visits every (t, r) pair once in a seeded random order."""
    if dataset.model != model.codec.model:
        raise TrainingError(f"dataset is {dataset.model!r}, model expects {model.codec.model!r}")
    opt = Optimizers(model, cfg)
    cache = BatchCache(model, dataset)
    pairs = epoch_pairs(dataset, cfg)
    losses: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = derive_rng(cfg.seed, "train/order", epoch).permutation(len(pairs))
        rng = derive_rng(cfg.seed, "train/noise", epoch)
        for k in order:
            t, r = (int(v) for v in pairs[k])
            try:
                losses.append(train_step(model, opt, cache.prepared(t), cache.target(t, r), rng))
            except (TrainingError, FloatingPointError) as exc:
                raise TrainingError(f"epoch {epoch} step {step} (t={t}, r={r}): {exc}") from exc
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                return losses
        if callback is not None:
            callback(epoch, losses)
        log.debug("epoch %d mean loss %.5f", epoch, np.mean(losses[-len(pairs):]))
    return losses
