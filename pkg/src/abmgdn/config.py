"""Experiment configuration: JSON files with preset references.

A config names the ABM and its parameters, the training and evaluation
ramification sizes, the networks to train and the evaluation settings. The
built-in presets (xi1-xi3, psi1-psi4) are complete configs at paper scale.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from . import abm
from .ablate import ABLATIONS, GnnOnlyConfig, GnnOnlyTrainConfig
from .gdn import GdnConfig, TrainConfig

PRESETS = ("xi1", "xi2", "xi3", "psi1", "psi2", "psi3", "psi4")
MODEL_KINDS = ("gdn",) + ABLATIONS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RamifyConfig:
    T: int = 10
    R: int = 500


@dataclass(frozen=True)
class EvalConfig:
    T_eval: int = 25
    R_eval: int = 500
    n_samples: int = 500
    horizon: int = 25
    runs: int = 100
    micro_agents: int | None = None  # evaluate a seeded subset of agents; None = all
    max_rows: int = 1 << 16  # sampler batch bound (agents x draws)


def _section(cls, d: dict | None):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return d


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    params: dict
    name: str = "experiment"
    seed: int = 0
    ramify: RamifyConfig = field(default_factory=RamifyConfig)
    models: tuple = ("gdn",)
    gdn: GdnConfig = field(default_factory=GdnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    gnn_only: GnnOnlyConfig = field(default_factory=GnnOnlyConfig)
    gnn_only_train: GnnOnlyTrainConfig = field(default_factory=GnnOnlyTrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output: str | None = None

    def __post_init__(self):
        if self.model not in abm.MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {abm.MODELS}")
        for m in self.models:
            if m not in MODEL_KINDS:
                raise ConfigError(f"unknown model kind {m!r}; expected one of {MODEL_KINDS}")
        try:
            abm.params_from_dict(self.model, self.params)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {self.model} params: {exc}") from exc

    def engine(self):
        return abm.make_engine(self.model, self.params)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": self.params,
            "name": self.name,
            "seed": self.seed,
            "ramify": asdict(self.ramify),
            "models": list(self.models),
            "gdn": self.gdn.to_dict(),
            "train": asdict(self.train),
            "gnn_only": self.gnn_only.to_dict(),
            "gnn_only_train": asdict(self.gnn_only_train),
            "eval": asdict(self.eval),
            "output": self.output,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "model" not in d or "params" not in d:
            raise ConfigError("config needs 'model' and 'params'")
        try:
            gdn = d.get("gdn")
            gnn = d.get("gnn_only")
            return cls(
                model=d["model"],
                params=dict(d["params"]),
                name=d.get("name", "experiment"),
                seed=int(d.get("seed", 0)),
                ramify=RamifyConfig(**_section(RamifyConfig, d.get("ramify"))),
                models=tuple(d.get("models", ("gdn",))),
                gdn=GdnConfig.from_dict({**GdnConfig().to_dict(), **gdn}) if gdn else GdnConfig(),
                train=TrainConfig(**_section(TrainConfig, d.get("train"))),
                gnn_only=GnnOnlyConfig.from_dict({**GnnOnlyConfig().to_dict(), **gnn}) if gnn else GnnOnlyConfig(),
                gnn_only_train=GnnOnlyTrainConfig(**_section(GnnOnlyTrainConfig, d.get("gnn_only_train"))),
                eval=EvalConfig(**_section(EvalConfig, d.get("eval"))),
                output=d.get("output"),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def fingerprint(self, *sections: str) -> str:
        """Digest of the whole config, or only of the named top-level sections."""
        d = self.to_dict()
        d.pop("output")
        if sections:
            d = {k: d[k] for k in sections}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def preset_path(name: str):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {list(PRESETS)}")
    return resources.files("abmgdn") / "presets" / f"{name}.json"


def apply_overrides(d: dict, overrides: list[str]) -> dict:
    """``a.b=value`` overrides; values parse as JSON, else stay strings."""
    d = json.loads(json.dumps(d))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return d


def load_config(source: str, overrides: list[str] | None = None) -> ExperimentConfig:
    """``source`` is a preset name or a path to a JSON config."""
    if source in PRESETS:
        text = preset_path(source).read_text()
    else:
        p = Path(source)
        if not p.is_file():
            raise ConfigError(f"no preset or config file named {source!r}")
        text = p.read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return ExperimentConfig.from_dict(apply_overrides(d, overrides or []))
