"""Micro (per-agent EMD) and macro (sMAPE over rollout ensembles) evaluation,
plus the AR(1) macro baseline.

Anything that can produce successor states can be evaluated: a ground-truth
engine (the self-test), a GDN or diffusion-only model, or the deterministic
GNN-only ablation. ``as_sampler`` wraps each behind the same two calls.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .abm.predprey import PredPreyState
from .ramify import RamificationDataset
from .seeding import derive_rng

SERIES = {"schelling": ("happy",), "predprey": ("prey_active", "predator_active")}


class EvalError(ValueError):
    pass


# ---- distances ---------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalDistribution:
    kind: str  # "numeric-1d" | "categorical"
    support: np.ndarray  # sorted values, or category indices
    probs: np.ndarray
    n: int

    def __post_init__(self):
        if self.kind not in ("numeric-1d", "categorical"):
            raise EvalError(f"unknown distribution kind {self.kind!r}")
        if self.n <= 0:
            raise EvalError("empty distribution")
        if abs(float(self.probs.sum()) - 1.0) > 1e-12:
            raise EvalError("probabilities do not sum to 1")

    @classmethod
    def from_samples(cls, values) -> "EmpiricalDistribution":
        v = np.asarray(values, dtype=np.float64).ravel()
        if v.size == 0:
            raise EvalError("empty distribution")
        support, counts = np.unique(v, return_counts=True)
        return cls("numeric-1d", support, counts / v.size, v.size)

    @classmethod
    def weighted(cls, support, weights) -> "EmpiricalDistribution":
        support = np.asarray(support, dtype=np.float64)
        w = np.asarray(weights, dtype=np.float64)
        order = np.argsort(support, kind="stable")
        return cls("numeric-1d", support[order], w[order] / w.sum(), 1)

    @classmethod
    def categorical(cls, labels, n_categories: int) -> "EmpiricalDistribution":
        labels = np.asarray(labels, dtype=np.int64).ravel()
        if labels.size == 0:
            raise EvalError("empty distribution")
        counts = np.bincount(labels, minlength=n_categories)
        return cls("categorical", np.arange(n_categories), counts / labels.size, labels.size)


def emd_1d(a: EmpiricalDistribution, b: EmpiricalDistribution) -> float:
    """Exact 1-D transport cost: integral of |F_a - F_b| over the merged support."""
    if a.kind != "numeric-1d" or b.kind != "numeric-1d":
        raise EvalError("emd_1d needs two numeric-1d distributions")
    xs = np.union1d(a.support, b.support)
    fa = np.cumsum(np.bincount(np.searchsorted(xs, a.support), a.probs, xs.size))
    fb = np.cumsum(np.bincount(np.searchsorted(xs, b.support), b.probs, xs.size))
    return float(np.sum(np.abs(fa - fb)[:-1] * np.diff(xs)))


def emd_categorical(p, q) -> float:
    """Unit ground metric, so the transport cost is the total variation."""
    p = p.probs if isinstance(p, EmpiricalDistribution) else np.asarray(p, dtype=np.float64)
    q = q.probs if isinstance(q, EmpiricalDistribution) else np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise EvalError(f"category mismatch: {p.shape} vs {q.shape}")
    return float(0.5 * np.abs(p - q).sum())


def _counts(samples: np.ndarray, n_values: int) -> np.ndarray:
    """``samples`` [S, m] ints in 0..n_values-1 -> per-column histograms [m, n_values]."""
    S, m = samples.shape
    flat = samples.T.astype(np.int64) + (np.arange(m) * n_values)[:, None]
    return np.bincount(flat.ravel(), minlength=m * n_values).reshape(m, n_values) / S


def lattice_emd(a: np.ndarray, b: np.ndarray, n_values: int) -> np.ndarray:
    """Column-wise ``emd_1d`` between integer samples on 0..n_values-1 (unit spacing)."""
    fa = np.cumsum(_counts(a, n_values), axis=1)
    fb = np.cumsum(_counts(b, n_values), axis=1)
    return np.abs(fa - fb)[:, :-1].sum(axis=1)


def categorical_emd(a: np.ndarray, b: np.ndarray, n_categories: int) -> np.ndarray:
    """Column-wise ``emd_categorical`` between label samples."""
    return 0.5 * np.abs(_counts(a, n_categories) - _counts(b, n_categories)).sum(axis=1)


# ---- samplers ----------------------------------------------------------------

def _arrays(states: list):
    pos = np.stack([s.pos for s in states])
    phase = np.stack([s.phase for s in states]) if isinstance(states[0], PredPreyState) else None
    return pos, phase


class EngineSampler:
    kind = "engine"

    def __init__(self, engine):
        self.engine = engine

    def samples(self, state, n: int, rng: np.random.Generator):
        return _arrays([self.engine.step(state, rng) for _ in range(n)])

    def rollout(self, initial, steps: int, n_runs: int, seed: int, tag: str = "rollout") -> list[list]:
        return engine_rollout(self.engine, initial, steps, n_runs, seed, tag)


class DiffusionSampler:
    """GDN or diffusion-only model; ``max_rows`` bounds agents x samples per pass."""

    kind = "diffusion"

    def __init__(self, model, max_rows: int = 1 << 16):
        self.model = model
        self.max_rows = max_rows

    def samples(self, state, n: int, rng: np.random.Generator):
        from .gdn.sample import sample_dynamic

        codec = self.model.codec
        per = max(1, self.max_rows // state.n_agents)
        out = []
        for lo in range(0, n, per):
            dyn = sample_dynamic(self.model, [state], [rng], repeats=min(per, n - lo))[0]
            out += [codec.decode_dynamic(d, state) for d in dyn]
        return _arrays(out)

    def rollout(self, initial, steps: int, n_runs: int, seed: int, tag: str = "rollout") -> list[list]:
        from .gdn.sample import rollout

        per = max(1, self.max_rows // initial.n_agents)
        return rollout(self.model, initial, steps, n_runs, seed, batch_size=per)


class DeterministicSampler:
    """GNN-only ablation: every draw is the same prediction."""

    kind = "deterministic"

    def __init__(self, model):
        self.model = model

    def samples(self, state, n: int, rng: np.random.Generator):
        pos, phase = _arrays(self.model.predict([state]))
        rep = np.repeat(pos, n, axis=0)
        return rep, (None if phase is None else np.repeat(phase, n, axis=0))

    def rollout(self, initial, steps: int, n_runs: int, seed: int, tag: str = "rollout") -> list[list]:
        traj = [initial]
        for _ in range(steps):
            traj.append(self.model.predict([traj[-1]])[0])
        return [list(traj) for _ in range(n_runs)]


def as_sampler(obj):
    if isinstance(obj, (EngineSampler, DiffusionSampler, DeterministicSampler)):
        return obj
    if hasattr(obj, "step") and hasattr(obj, "initial_state"):
        return EngineSampler(obj)
    kind = getattr(obj, "kind", None)
    if kind in ("gdn", "diffusion-only"):
        return DiffusionSampler(obj)
    if kind == "gnn-only":
        return DeterministicSampler(obj)
    raise EvalError(f"cannot evaluate object of type {type(obj).__name__}")


def engine_rollout(engine, initial, steps: int, n_runs: int, seed: int, tag: str = "truth") -> list[list]:
    """Ground-truth ensemble; run k draws from ``derive_rng(seed, tag, k)``.

    Runs keep stepping past terminal states (they are fixed points), so every
    trajectory has ``steps + 1`` states.
    """
    out = []
    for k in range(n_runs):
        rng = derive_rng(seed, tag, k)
        traj = [initial]
        for _ in range(steps):
            traj.append(engine.step(traj[-1], rng))
        out.append(traj)
    return out


# ---- micro -------------------------------------------------------------------

@dataclass
class MicroReport:
    model: str
    t: np.ndarray
    agent: np.ndarray
    feature: np.ndarray  # "x" / "y" / "phase"
    emd: np.ndarray
    n_truth: int
    n_samples: int
    noise_floor: float | None = None

    @property
    def mean(self) -> float:
        return float(self.emd.mean())

    @property
    def n_entries(self) -> int:
        return int(self.emd.size)

    def summary(self) -> dict:
        d = {"metric": "micro-emd", "model": self.model, "mean_emd": self.mean,
             "n_entries": self.n_entries, "n_truth": self.n_truth, "n_samples": self.n_samples,
             "noise_floor": self.noise_floor}
        for f in np.unique(self.feature):
            d[f"mean_emd_{f}"] = float(self.emd[self.feature == f].mean())
        return d

    def rows(self):
        order = np.lexsort((self.feature, self.agent, self.t))
        for k in order:
            yield {"t": int(self.t[k]), "agent": int(self.agent[k]), "feature": str(self.feature[k]),
                   "emd": repr(float(self.emd[k]))}


def _micro_cells(model: str, L: int, truth, pred, agents: np.ndarray):
    """EMD per (agent, feature) for one conditioning state."""
    if model == "schelling":
        tp, pp = truth[0][:, agents], pred[0][:, agents]
        return [("x", lattice_emd(tp[..., 0], pp[..., 0], L)), ("y", lattice_emd(tp[..., 1], pp[..., 1], L))]
    return [("phase", categorical_emd(truth[1][:, agents], pred[1][:, agents], 4))]


def _assemble(model, parts, n_truth, n_samples) -> MicroReport:
    if not parts:
        raise EvalError("no micro cells evaluated")
    t = np.concatenate([np.full(v.size, tt) for tt, _, _, v in parts])
    agent = np.concatenate([a for _, a, _, _ in parts])
    feature = np.concatenate([np.full(v.size, f) for _, _, f, v in parts])
    emd = np.concatenate([v for _, _, _, v in parts])
    return MicroReport(model, t, agent, feature, emd, n_truth, n_samples)


def _selection(future: RamificationDataset, agents, timesteps):
    if future.T == 0:
        raise EvalError("future ramification has no transitions to condition on")
    agents = np.arange(future.n_agents) if agents is None else np.asarray(agents, dtype=np.int64)
    timesteps = range(future.T) if timesteps is None else list(timesteps)
    for t in timesteps:
        if not 0 <= t < future.T:
            raise EvalError(f"missing conditioning context for t={t}")
    return agents, timesteps


def micro_eval(future: RamificationDataset, model, n_samples: int = 500, seed: int = 0,
               agents=None, timesteps=None) -> MicroReport:
    """Per-(agent, t) EMD between the R_eval ground-truth siblings of
    ``future.main[t]`` and ``n_samples`` model draws under the same condition."""
    sampler = as_sampler(model)
    agents, timesteps = _selection(future, agents, timesteps)
    L = future.main[0].grid_size
    parts = []
    for t in timesteps:
        blk = future.siblings[t]
        pred = sampler.samples(future.main[t], n_samples, derive_rng(seed, "micro", t))
        for f, v in _micro_cells(future.model, L, (blk.pos, blk.phase), pred, agents):
            parts.append((t, agents, f, v))
    return _assemble(future.model, parts, future.R, n_samples)


def micro_noise_floor(future: RamificationDataset, seed: int = 0, agents=None, timesteps=None) -> MicroReport:
    """Split-half floor: the same table computed between two disjoint halves of
    the ground-truth siblings (R/2 vs R/2 samples)."""
    agents, timesteps = _selection(future, agents, timesteps)
    L = future.main[0].grid_size
    parts = []
    for t in timesteps:
        blk = future.siblings[t]
        perm = derive_rng(seed, "micro/split", t).permutation(blk.R)
        h1, h2 = perm[:blk.R // 2], perm[blk.R // 2:2 * (blk.R // 2)]
        half = lambda idx: (blk.pos[idx], None if blk.phase is None else blk.phase[idx])  # noqa: E731
        for f, v in _micro_cells(future.model, L, half(h1), half(h2), agents):
            parts.append((t, agents, f, v))
    return _assemble(future.model, parts, future.R // 2, future.R // 2)


# ---- macro -------------------------------------------------------------------

@dataclass(frozen=True)
class MacroTrajectory:
    name: str
    values: np.ndarray  # ensemble mean, t = 1..horizon
    n_runs: int

    @classmethod
    def from_runs(cls, name: str, runs: np.ndarray) -> "MacroTrajectory":
        runs = np.atleast_2d(np.asarray(runs, dtype=np.float64))
        return cls(name, runs.mean(axis=0), runs.shape[0])


def smape(truth, pred) -> float:
    a = truth.values if isinstance(truth, MacroTrajectory) else np.asarray(truth, dtype=np.float64)
    f = pred.values if isinstance(pred, MacroTrajectory) else np.asarray(pred, dtype=np.float64)
    if a.shape != f.shape:
        raise EvalError(f"length mismatch: {a.shape} vs {f.shape}")
    if a.size == 0:
        raise EvalError("empty series")
    den = np.abs(a) + np.abs(f)
    num = np.abs(a - f)
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(2.0 * terms.mean())


def smape_predprey(truth: tuple, pred: tuple) -> float:
    """Mean of the prey and predator sMAPEs."""
    return 0.5 * (smape(truth[0], pred[0]) + smape(truth[1], pred[1]))


def macro_series(engine, trajectories: list[list]) -> dict[str, np.ndarray]:
    """``{series: [runs, horizon]}`` for t = 1..horizon (the shared initial state is dropped)."""
    names = SERIES[engine.kind]
    out = {n: np.zeros((len(trajectories), len(trajectories[0]) - 1)) for n in names}
    for k, traj in enumerate(trajectories):
        for j, s in enumerate(traj[1:]):
            stats = engine.macro_stats(s)
            for n in names:
                out[n][k, j] = stats[n]
    return out


def ensemble_smape(truth: dict, pred: dict) -> dict[str, float]:
    """Per-series sMAPE on ensemble means plus the combined score (mean over series)."""
    per = {n: smape(truth[n].mean(axis=0), pred[n].mean(axis=0)) for n in truth}
    per["combined"] = float(np.mean(list(per.values())))
    return per


def macro_noise_floor(truth: dict, seed: int = 0, n_splits: int = 20) -> float:
    """Split-ensemble floor: combined sMAPE between two disjoint halves of the
    ground-truth runs, averaged over random splits."""
    runs = next(iter(truth.values())).shape[0]
    if runs < 2:
        raise EvalError("need at least two runs for a split-ensemble floor")
    vals = []
    for k in range(n_splits):
        perm = derive_rng(seed, "macro/split", k).permutation(runs)
        h1, h2 = perm[:runs // 2], perm[runs // 2:2 * (runs // 2)]
        vals.append(ensemble_smape({n: v[h1] for n, v in truth.items()},
                                   {n: v[h2] for n, v in truth.items()})["combined"])
    return float(np.mean(vals))


@dataclass
class MacroReport:
    model: str
    truth: dict
    pred: dict
    scores: dict
    noise_floor: float | None = None
    label: str = "model"

    @property
    def smape(self) -> float:
        return self.scores["combined"]

    def mean_series(self) -> dict[str, dict[str, list[float]]]:
        return {src: {n: v.mean(axis=0).tolist() for n, v in d.items()}
                for src, d in (("truth", self.truth), (self.label, self.pred))}

    def summary(self) -> dict:
        any_series = next(iter(self.truth.values()))
        return {"metric": "macro-smape", "model": self.model, "label": self.label,
                "smape": self.smape, "per_series": self.scores, "noise_floor": self.noise_floor,
                "horizon": int(any_series.shape[1]), "runs": int(any_series.shape[0]),
                "mean_series": self.mean_series()}

    def rows(self):
        for src, d in (("truth", self.truth), (self.label, self.pred)):
            for n in sorted(d):
                for run in range(d[n].shape[0]):
                    for j in range(d[n].shape[1]):
                        yield {"source": src, "series": n, "run": run, "t": j + 1,
                               "value": repr(float(d[n][run, j]))}


def macro_eval(engine, model, initial, horizon: int = 25, runs: int = 100, seed: int = 0,
               floor: bool = True, label: str = "model") -> MacroReport:
    """Ground-truth and model ensembles from the same initial state; sMAPE on
    the ensemble-mean series."""
    truth = macro_series(engine, engine_rollout(engine, initial, horizon, runs, seed, "macro/truth"))
    pred = macro_series(engine, as_sampler(model).rollout(initial, horizon, runs, seed))
    return MacroReport(engine.kind, truth, pred, ensemble_smape(truth, pred),
                       macro_noise_floor(truth, seed) if floor else None, label)


# ---- AR(1) -------------------------------------------------------------------

@dataclass(frozen=True)
class Ar1Model:
    phi: float
    sigma: float
    name: str = ""

    def __post_init__(self):
        if self.sigma < 0:
            raise EvalError("sigma must be non-negative")


def ar1_fit(series, name: str = "") -> Ar1Model:
    """Least squares on lag-1 pairs (no intercept); sigma is the residual RMS."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 3:
        raise EvalError("AR(1) fit needs a 1-D series of length >= 3")
    if np.ptp(x) == 0:
        raise EvalError(f"degenerate zero-variance series {name!r}")
    prev, nxt = x[:-1], x[1:]
    den = prev @ prev
    if den == 0:
        raise EvalError(f"degenerate series {name!r}: all lagged values are zero")
    phi = float(prev @ nxt / den)
    resid = nxt - phi * prev
    return Ar1Model(phi, float(np.sqrt(np.mean(resid ** 2))), name)


def ar1_forecast(model: Ar1Model, x0: float, horizon: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """x_1..x_horizon iterated from x0; noiseless when sigma is 0 or rng is None."""
    out = np.empty(horizon)
    x = float(x0)
    noise = rng is not None and model.sigma > 0
    for k in range(horizon):
        x = model.phi * x + (model.sigma * rng.standard_normal() if noise else 0.0)
        out[k] = x
    return out


def ar1_ensemble(train: dict, x0: dict, horizon: int = 25, runs: int = 100, seed: int = 0):
    """Fit one AR(1) per series on its training portion and forecast ``runs``
    noisy continuations from ``x0``. Returns ``(models, {series: [runs, horizon]})``."""
    models, pred = {}, {}
    for j, n in enumerate(sorted(train)):
        models[n] = ar1_fit(train[n], n)
        pred[n] = np.stack([ar1_forecast(models[n], x0[n], horizon, derive_rng(seed, "ar1", j, k))
                            for k in range(runs)])
    return models, pred


def main_branch_series(engine, states: list) -> dict[str, np.ndarray]:
    """Macro series along a single trajectory, including its first state."""
    names = SERIES[engine.kind]
    stats = [engine.macro_stats(s) for s in states]
    return {n: np.array([st[n] for st in stats], dtype=np.float64) for n in names}


def ar1_baseline(engine, dataset: RamificationDataset, horizon: int = 25, runs: int = 100,
                 seed: int = 0) -> tuple[dict, MacroReport]:
    """AR(1) fit on the training main branch, forecasting past its last state;
    scored against the same ground-truth ensemble ``macro_eval`` uses."""
    train = main_branch_series(engine, dataset.main)
    x0 = {n: v[-1] for n, v in train.items()}
    models, pred = ar1_ensemble(train, x0, horizon, runs, seed)
    truth = macro_series(engine, engine_rollout(engine, dataset.main[-1], horizon, runs, seed, "macro/truth"))
    return models, MacroReport(engine.kind, truth, pred, ensemble_smape(truth, pred), None, "ar1")


# ---- serialization -----------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_report(report, out_dir, stem: str, extra: dict | None = None) -> list[Path]:
    """``<stem>.json`` summary and ``<stem>.csv`` table; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = report.summary()
    summary.update(extra or {})
    js = out / f"{stem}.json"
    js.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    cs = out / f"{stem}.csv"
    rows = report.rows()
    first = next(rows, None)
    with cs.open("w", newline="") as fh:
        if first is not None:
            w = csv.DictWriter(fh, fieldnames=list(first), lineterminator="\n")
            w.writeheader()
            w.writerow(first)
            w.writerows(rows)
    return [js, cs]


@dataclass
class Ar1Report:
    models: dict
    macro: MacroReport = field(repr=False)

    def summary(self) -> dict:
        d = self.macro.summary()
        d["ar1"] = {n: {"phi": m.phi, "sigma": m.sigma} for n, m in self.models.items()}
        return d

    def rows(self):
        return self.macro.rows()
