"""Self-describing checkpoints for GDN-family models."""

from __future__ import annotations

from pathlib import Path

from ..encode import FeatureCodec
from ..nn import checkpoint
from .model import GdnConfig, GdnModel

VERSION = 1


def model_meta(model, train_fingerprint: str | None = None, extra: dict | None = None) -> dict:
    meta = {
        "kind": model.kind,
        "version": VERSION,
        "codec": model.codec.descriptor(),
        "config": model.cfg.to_dict(),
        "aggregation": model.aggregation,
        "train_fingerprint": train_fingerprint,
    }
    if getattr(model, "schedule", None) is not None:
        meta["schedule"] = model.schedule.describe()
    n_agents = getattr(getattr(model, "context", None), "n_agents", None) or getattr(model, "n_agents", None)
    if n_agents is not None:
        meta["n_agents"] = n_agents
    meta.update(extra or {})
    return meta


def save_model(model, path, train_fingerprint: str | None = None, extra: dict | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(path, model.state_dict(), model_meta(model, train_fingerprint, extra))


def load_model(path):
    arrays, meta = checkpoint.load(path)
    if meta.get("version") != VERSION:
        raise checkpoint.CheckpointError(f"unsupported model version {meta.get('version')}")
    codec = FeatureCodec.from_descriptor(meta["codec"])
    kind = meta["kind"]
    if kind in ("gdn", "diffusion-only"):
        cfg = GdnConfig.from_dict(meta["config"])
        model = GdnModel(codec, cfg, 0, context="graph" if kind == "gdn" else "flat",
                         n_agents=meta.get("n_agents"))
    elif kind == "gnn-only":
        from ..ablate import GnnOnlyConfig, GnnOnlyModel

        model = GnnOnlyModel(codec, GnnOnlyConfig.from_dict(meta["config"]), 0)
    else:
        raise checkpoint.CheckpointError(f"unknown model kind {kind!r}")
    model.load_state_dict(arrays)
    return model, meta
