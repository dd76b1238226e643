"""Ramification datasets: a main branch plus R sibling successors per step.

``main[t]`` is the branch-0 state at time t (t = 0..T). For every t < T the
engine is stepped R+1 times from ``main[t]``: child 0 becomes ``main[t+1]``,
children 1..R are the siblings that supply training targets.

On disk a dataset is a directory::

    manifest.json        params, seed, T, R, derivation rule, sha256 per file
    initial.jsonl        main[0]
    step_0000.jsonl      children r=0..R of main[0] (records carry "r")
    ...
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import abm
from .abm import snapshot
from .abm.predprey import PredPreyState
from .abm.schelling import SchellingState
from .seeding import DERIVATION, derive_rng

FORMAT = "abmgdn-ramification/1"


class DatasetError(ValueError):
    pass


@dataclass
class SiblingBlock:
    """The R sibling successors of one main-branch state, stored compactly."""

    pos: np.ndarray  # [R, n, 2] int16
    phase: np.ndarray | None  # [R, n] int8, PredPrey only

    @property
    def R(self) -> int:
        return self.pos.shape[0]


@dataclass
class RamificationDataset:
    model: str
    params: dict
    seed: int
    R: int
    main: list
    siblings: list[SiblingBlock]
    tag: str = "train"
    requested_T: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.siblings)

    @property
    def n_agents(self) -> int:
        return self.main[0].n_agents

    @property
    def truncated(self) -> bool:
        return self.requested_T is not None and self.T < self.requested_T

    def sibling(self, t: int, r: int):
        """State of sibling r (1..R) grown from ``main[t]``."""
        if not 0 <= t < self.T:
            raise IndexError(f"t={t} outside 0..{self.T - 1}")
        if not 1 <= r <= self.R:
            raise IndexError(f"r={r} outside 1..{self.R}")
        blk = self.siblings[t]
        st = self.main[t].copy()
        st.t = self.main[t].t + 1
        st.pos = blk.pos[r - 1].astype(np.int64)
        if blk.phase is not None:
            st.phase = blk.phase[r - 1].copy()
        return st

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps({"model": self.model, "params": self.params, "seed": self.seed,
                             "R": self.R, "T": self.T}, sort_keys=True).encode())
        for s in self.main:
            h.update(state_digest(s).encode())
        for b in self.siblings:
            h.update(np.ascontiguousarray(b.pos).tobytes())
            if b.phase is not None:
                h.update(np.ascontiguousarray(b.phase).tobytes())
        return h.hexdigest()


def state_digest(state) -> str:
    h = hashlib.sha256()
    h.update(np.int64(state.t).tobytes())
    if isinstance(state, SchellingState):
        parts = (state.color, state.pos)
    else:
        parts = (state.kind, state.phase, state.pos, state.parent)
    for a in parts:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def _block(children: list) -> SiblingBlock:
    pos = np.stack([c.pos for c in children]).astype(np.int16)
    phase = np.stack([c.phase for c in children]) if isinstance(children[0], PredPreyState) else None
    return SiblingBlock(pos, phase)


def generate(engine, T: int, R: int, seed: int, initial=None, tag: str = "train") -> RamificationDataset:
    """Main branch of up to T transitions with R siblings per step.

    Generators: ``(tag+"/init")`` for the initial state, ``(tag+"/branch", t, r)``
    for child r of ``main[t]``; r = 0 is the main-branch continuation. Stops
    early (recording the shorter T) once the engine reports a terminal state.
    """
    if T < 0 or R < 1:
        raise ValueError("need T >= 0 and R >= 1")
    if initial is None:
        initial = engine.initial_state(derive_rng(seed, tag + "/init"))
    main = [initial]
    blocks = []
    for t in range(T):
        parent = main[t]
        if engine.is_terminal(parent):
            break
        children = [engine.step(parent, derive_rng(seed, tag + "/branch", t, r)) for r in range(R + 1)]
        main.append(children[0])
        blocks.append(_block(children[1:]))
    return RamificationDataset(engine.kind, abm.params_to_dict(engine.params), seed, R, main, blocks,
                               tag=tag, requested_T=T)


def future_ramification(engine, dataset: RamificationDataset, T_eval: int = 25, R_eval: int = 500,
                        seed: int | None = None) -> RamificationDataset:
    """Held-out ramification of ``T_eval`` states (``T_eval - 1`` transitions)
    started from the training main-branch terminal state, on the ``"eval"``
    seed stream."""
    start = dataset.main[-1].copy()
    ds = generate(engine, T_eval - 1, R_eval, dataset.seed if seed is None else seed,
                  initial=start, tag="eval")
    ds.meta["start_digest"] = state_digest(start)
    return ds


# ---- tuple stream ----------------------------------------------------------

@dataclass(frozen=True)
class TransitionBatch:
    """All agents of one sampled (t, r): conditioning main[t], targets sibling r."""

    t: int
    r: int
    state: object
    target: object


@dataclass(frozen=True)
class TransitionTuple:
    agent: int
    t: int
    r: int
    state: np.ndarray  # encoded Z_t^(i)
    neighbours: np.ndarray  # encoded Z_t^(j), one row per in-neighbour
    target: np.ndarray  # encoded Z_{t+1}^(i)[r]


def training_pairs(dataset: RamificationDataset) -> np.ndarray:
    """Every ``(t, r)`` with r in 1..R, as an ``[T*R, 2]`` array."""
    if dataset.T == 0:
        raise DatasetError("dataset has no transitions")
    t, r = np.meshgrid(np.arange(dataset.T), np.arange(1, dataset.R + 1), indexing="ij")
    return np.stack([t.ravel(), r.ravel()], axis=1)


def sample_pairs(dataset: RamificationDataset, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws of t ~ U(0..T-1), r ~ U(1..R)."""
    if dataset.T == 0:
        raise DatasetError("dataset has no transitions")
    return np.stack([rng.integers(dataset.T, size=n), rng.integers(1, dataset.R + 1, size=n)], axis=1)


def training_tuples(dataset: RamificationDataset, pairs=None) -> Iterator[TransitionBatch]:
    """Whole-agent-set batches for each pair (default: all pairs in order)."""
    for t, r in (training_pairs(dataset) if pairs is None else pairs):
        yield TransitionBatch(int(t), int(r), dataset.main[t], dataset.sibling(int(t), int(r)))


def count_tuples(dataset: RamificationDataset) -> int:
    return dataset.T * dataset.R * dataset.n_agents


def agent_tuples(batch: TransitionBatch, codec, graph) -> Iterator[TransitionTuple]:
    """Per-agent view of a batch (used for inspection, not training)."""
    Z = codec.encode(batch.state)
    Y = codec.encode(batch.target)
    for i in range(Z.shape[0]):
        nbrs = graph.src[graph.dst == i]
        yield TransitionTuple(i, batch.t, batch.r, Z[i], Z[nbrs], Y[i])


# ---- persistence -----------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_dataset(dataset: RamificationDataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}

    def emit(name: str, states, extra_fn):
        path = out / name
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            snapshot.write_header(fh, dataset.model, dataset.params, dataset.seed)
            for r, st in enumerate(states):
                snapshot.write_states(fh, [st], extra_fn(r))
        os.replace(tmp, path)
        files[name] = _sha256(path)

    emit("initial.jsonl", [dataset.main[0]], lambda r: None)
    for t in range(dataset.T):
        children = [dataset.main[t + 1]] + [dataset.sibling(t, r) for r in range(1, dataset.R + 1)]
        emit(f"step_{t:04d}.jsonl", children, lambda r: {"r": r})
    manifest = {
        "format": FORMAT, "model": dataset.model, "params": dataset.params, "seed": dataset.seed,
        "seed_derivation": DERIVATION, "tag": dataset.tag, "T": dataset.T, "R": dataset.R,
        "requested_T": dataset.requested_T, "n_agents": dataset.n_agents,
        "meta": dataset.meta, "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def read_manifest(path) -> dict:
    manifest = json.loads((Path(path) / "manifest.json").read_text())
    if manifest.get("format") != FORMAT:
        raise DatasetError(f"{path}: not a ramification dataset")
    return manifest


def read_dataset(path, verify: bool = True) -> RamificationDataset:
    root = Path(path)
    manifest = read_manifest(root)
    if verify:
        for name, digest in manifest["files"].items():
            if _sha256(root / name) != digest:
                raise DatasetError(f"checksum mismatch for {name}")
    model, L = manifest["model"], manifest["params"]["grid_size"]
    _, init = snapshot.read_snapshot(root / "initial.jsonl")
    main = [init[0]]
    blocks = []
    for t in range(manifest["T"]):
        with open(root / f"step_{t:04d}.jsonl") as fh:
            snapshot.read_header(fh)
            records = [json.loads(line) for line in fh if line.strip()]
        children = snapshot.states_from_records(model, L, records, key="r")
        ordered = [children[(r, main[0].t + t + 1)] for r in range(manifest["R"] + 1)]
        main.append(ordered[0])
        blocks.append(_block(ordered[1:]))
    return RamificationDataset(model, manifest["params"], manifest["seed"], manifest["R"], main, blocks,
                               tag=manifest.get("tag", "train"), requested_T=manifest.get("requested_T"),
                               meta=manifest.get("meta", {}))
