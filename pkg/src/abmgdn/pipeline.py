"""Resumable experiment pipeline and plot-data export.

Stages run in a fixed order: simulate, ramify, ramify-eval, one train /
rollout / eval-micro / eval-macro group per configured model, then the AR(1)
baseline. Each stage has a fingerprint built from the config sections it reads
and its upstream fingerprints. A stage whose recorded fingerprint matches and
whose files still hash to the recorded sha256 is skipped, so re-running a
finished pipeline does nothing and an interrupted one resumes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np

from . import __version__, abm, evaluate, ramify
from .abm.predprey import PredPreyState
from .abm.schelling import SchellingState
from .abm.snapshot import read_snapshot, state_records, write_snapshot
from .config import ExperimentConfig
from .encode import FeatureCodec
from .gdn import GdnModel, load_model, save_model, train
from .nn import checkpoint
from .seeding import derive_rng

MANIFEST = "manifest.json"
LOCK = ".lock"
ROLLOUT_FORMAT = "abmgdn-rollout/1"


class PipelineError(RuntimeError):
    pass


class ExportError(ValueError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


# ---- trajectory ensembles ----------------------------------------------------

def save_trajectories(path, trajectories: list[list], model: str, params: dict, extra: dict | None = None) -> None:
    """``runs x (steps + 1)`` states in the checkpoint container (no timestamps)."""
    first = trajectories[0][0]
    pos = np.stack([np.stack([s.pos for s in tr]) for tr in trajectories])
    arrays = {"pos": pos, "t": np.array([s.t for s in trajectories[0]])}
    if isinstance(first, PredPreyState):
        arrays["phase"] = np.stack([np.stack([s.phase for s in tr]) for tr in trajectories])
        arrays["kind"], arrays["parent"] = first.kind, first.parent
    else:
        arrays["color"] = first.color
    meta = {"format": ROLLOUT_FORMAT, "model": model, "params": params, "grid_size": first.grid_size}
    meta.update(extra or {})
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(path, arrays, meta)


def load_trajectories(path) -> tuple[dict, list[list]]:
    arrays, meta = checkpoint.load(path)
    if meta.get("format") != ROLLOUT_FORMAT:
        raise ExportError(f"{path} is not a rollout file")
    L = meta["grid_size"]
    pos = arrays["pos"].astype(np.int64)
    ts = arrays["t"].astype(np.int64)
    out = []
    for run in range(pos.shape[0]):
        tr = []
        for j, t in enumerate(ts):
            if meta["model"] == "predprey":
                tr.append(PredPreyState(L, arrays["kind"].astype(np.int8), arrays["phase"][run, j].astype(np.int8),
                                        pos[run, j], arrays["parent"].astype(np.int64), int(t)))
            else:
                tr.append(SchellingState(L, arrays["color"].astype(np.int8), pos[run, j], int(t)))
        out.append(tr)
    return meta, out


# ---- manifest / lock -----------------------------------------------------------

class RunDir:
    def __init__(self, root):
        self.root = Path(root)
        self.path = self.root / MANIFEST
        if self.path.exists():
            self.manifest = json.loads(self.path.read_text())
        else:
            self.manifest = {"format": "abmgdn-run/1", "created": _now(), "stages": {}}

    def rel(self, p) -> str:
        return Path(p).relative_to(self.root).as_posix()

    def up_to_date(self, name: str, fp: str) -> bool:
        st = self.manifest["stages"].get(name)
        if not st or st.get("status") != "complete" or st.get("fingerprint") != fp:
            return False
        return all((self.root / f).is_file() and sha256_file(self.root / f) == h
                   for f, h in st["files"].items())

    def record(self, name: str, fp: str, status: str, files=(), error: str | None = None, started=None):
        entry = {"fingerprint": fp, "status": status, "started": started or _now(), "finished": _now(),
                 "files": {self.rel(f): sha256_file(f) for f in sorted(map(Path, files))}}
        if error:
            entry["error"] = error
        self.manifest["stages"][name] = entry
        self.save()

    def save(self) -> None:
        files = {}
        for st in self.manifest["stages"].values():
            files.update(st["files"])
        self.manifest["files"] = dict(sorted(files.items()))
        self.manifest["updated"] = _now()
        self.root.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")


class Lock:
    """Advisory per-directory lock: one pipeline per output directory."""

    def __init__(self, root):
        self.path = Path(root) / LOCK

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise PipelineError(f"{self.path.parent} is locked by another run ({self.path})") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


# ---- stages ------------------------------------------------------------------

def micro_agents(cfg: ExperimentConfig, n_agents: int):
    k = cfg.eval.micro_agents
    if k is None or k >= n_agents:
        return None
    return np.sort(derive_rng(cfg.seed, "micro/agents").choice(n_agents, size=k, replace=False))


def build_model(kind: str, cfg: ExperimentConfig, codec: FeatureCodec, n_agents: int, index: int):
    rng = derive_rng(cfg.seed, "model/init", index)
    if kind == "gdn":
        return GdnModel(codec, cfg.gdn, rng)
    if kind == "diffusion-only":
        return GdnModel(codec, cfg.gdn, rng, context="flat", n_agents=n_agents)
    from .ablate import GnnOnlyModel

    return GnnOnlyModel(codec, cfg.gnn_only, rng)


def fit_model(kind: str, cfg: ExperimentConfig, dataset, index: int):
    from .ablate import train_gnn_only

    codec = FeatureCodec(dataset.model, dataset.params["grid_size"])
    model = build_model(kind, cfg, codec, dataset.n_agents, index)
    if kind == "gnn-only":
        losses = train_gnn_only(model, dataset, cfg.gnn_only_train)
        fingerprint = cfg.gnn_only_train.fingerprint()
    else:
        losses = train(model, dataset, cfg.train)
        fingerprint = cfg.train.fingerprint()
    return model, losses, fingerprint


def _sampler(model, cfg: ExperimentConfig):
    smp = evaluate.as_sampler(model)
    if isinstance(smp, evaluate.DiffusionSampler):
        smp.max_rows = cfg.eval.max_rows
    return smp


def run_pipeline(cfg: ExperimentConfig, out_dir=None, log=print) -> dict:
    """Run (or resume) every stage; returns the manifest."""
    root = Path(out_dir or cfg.output or default_output(cfg))
    with Lock(root):
        rd = RunDir(root)
        rd.manifest.update({"config_fingerprint": cfg.fingerprint(), "tool_version": __version__})
        rd.manifest["status"] = "running"
        rd.save()
        try:
            _run_stages(cfg, root, rd, log)
        except Exception as exc:
            rd.manifest["status"] = "partial"
            rd.save()
            raise PipelineError(str(exc)) from exc
        rd.manifest["status"] = "complete"
        rd.save()
        return rd.manifest


def default_output(cfg: ExperimentConfig) -> Path:
    base = Path(os.environ.get("ABMGDN_OUTPUT_ROOT", "runs"))
    return base / f"{cfg.name}-{cfg.fingerprint()[:10]}"


def _run_stages(cfg: ExperimentConfig, root: Path, rd: RunDir, log) -> None:
    def stage(name: str, fp: str, fn):
        if rd.up_to_date(name, fp):
            log(f"[skip] {name}")
            return
        log(f"[run ] {name}")
        started = _now()
        try:
            files = fn()
        except Exception as exc:
            rd.record(name, fp, "failed", error=f"{type(exc).__name__}: {exc}", started=started)
            raise
        rd.record(name, fp, "complete", files, started=started)

    engine = cfg.engine()
    d = cfg.to_dict()
    cfg_file = root / "config.json"
    fp_cfg = _digest(d | {"output": None})

    def write_config():
        cfg_file.write_text(cfg.dumps())
        return [cfg_file]

    stage("config", fp_cfg, write_config)

    fp_ram = _digest(["ramify", d["model"], d["params"], d["seed"], d["ramify"]])
    fp_sim = _digest(["simulate", fp_ram, d["eval"]["horizon"]])
    fp_eval_ds = _digest(["ramify-eval", fp_ram, d["eval"]["T_eval"], d["eval"]["R_eval"]])
    ds_dir, fut_dir = root / "data" / "train", root / "data" / "eval"

    def do_simulate():
        init = engine.initial_state(derive_rng(cfg.seed, "train/init"))
        states = abm.simulate(engine, cfg.ramify.T + cfg.eval.horizon, derive_rng(cfg.seed, "simulate"), init)
        path = root / "simulate" / "trajectory.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_snapshot(path, cfg.model, cfg.params, cfg.seed, states)
        return [path]

    def do_ramify():
        ds = ramify.generate(engine, cfg.ramify.T, cfg.ramify.R, cfg.seed)
        ramify.write_dataset(ds, ds_dir)
        return sorted(p for p in ds_dir.iterdir())

    def do_ramify_eval():
        ds = ramify.read_dataset(ds_dir)
        fut = ramify.future_ramification(engine, ds, cfg.eval.T_eval, cfg.eval.R_eval)
        ramify.write_dataset(fut, fut_dir)
        return sorted(p for p in fut_dir.iterdir())

    stage("simulate", fp_sim, do_simulate)
    stage("ramify", fp_ram, do_ramify)
    stage("ramify-eval", fp_eval_ds, do_ramify_eval)

    fp_truth = _digest(["rollout-truth", fp_ram, d["eval"]["horizon"], d["eval"]["runs"]])
    truth_path = root / "rollouts" / "truth.rollout"

    def do_truth():
        ds = ramify.read_dataset(ds_dir)
        trajs = evaluate.engine_rollout(engine, ds.main[-1], cfg.eval.horizon, cfg.eval.runs, cfg.seed, "macro/truth")
        save_trajectories(truth_path, trajs, cfg.model, cfg.params, {"source": "truth", "seed": cfg.seed})
        return [truth_path]

    stage("rollout-truth", fp_truth, do_truth)

    fp_floor = _digest(["eval-floor", fp_eval_ds, fp_truth, d["eval"]])

    def do_floors():
        fut = ramify.read_dataset(fut_dir)
        agents = micro_agents(cfg, fut.n_agents)
        micro_floor = evaluate.micro_noise_floor(fut, cfg.seed, agents)
        micro_self = evaluate.micro_eval(fut, engine, cfg.eval.n_samples, cfg.seed, agents)
        micro_self.noise_floor = micro_floor.mean
        _, truth = load_trajectories(truth_path)
        series = evaluate.macro_series(engine, truth)
        self_runs = evaluate.engine_rollout(engine, truth[0][0], cfg.eval.horizon, cfg.eval.runs, cfg.seed, "rollout")
        pred = evaluate.macro_series(engine, self_runs)
        macro_self = evaluate.MacroReport(engine.kind, series, pred, evaluate.ensemble_smape(series, pred),
                                          evaluate.macro_noise_floor(series, cfg.seed), "engine")
        return (evaluate.write_report(micro_self, root / "reports", "micro_engine")
                + evaluate.write_report(macro_self, root / "reports", "macro_engine"))

    stage("eval-selftest", fp_floor, do_floors)

    for index, kind in enumerate(cfg.models):
        section = ["gnn_only", "gnn_only_train"] if kind == "gnn-only" else ["gdn", "train"]
        fp_train = _digest(["train", kind, index, fp_ram] + [d[s] for s in section])
        fp_roll = _digest(["rollout", fp_train, d["eval"]["horizon"], d["eval"]["runs"]])
        fp_micro = _digest(["eval-micro", fp_train, fp_eval_ds, d["eval"]])
        fp_macro = _digest(["eval-macro", fp_roll, fp_truth])
        ckpt = root / "models" / f"{kind}.ckpt"
        roll = root / "rollouts" / f"{kind}.rollout"

        def do_train(kind=kind, index=index, ckpt=ckpt):
            ds = ramify.read_dataset(ds_dir)
            model, losses, tfp = fit_model(kind, cfg, ds, index)
            save_model(model, ckpt, tfp, {"dataset": ds.fingerprint()})
            loss_file = root / "models" / f"{kind}_loss.csv"
            with loss_file.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["step", "loss"])
                w.writerows((k, repr(v)) for k, v in enumerate(losses))
            return [ckpt, loss_file]

        def do_rollout(kind=kind, ckpt=ckpt, roll=roll):
            model, _ = load_model(ckpt)
            ds = ramify.read_dataset(ds_dir)
            trajs = _sampler(model, cfg).rollout(ds.main[-1], cfg.eval.horizon, cfg.eval.runs, cfg.seed)
            save_trajectories(roll, trajs, cfg.model, cfg.params, {"source": kind, "seed": cfg.seed})
            return [roll]

        def do_micro(kind=kind, ckpt=ckpt):
            model, _ = load_model(ckpt)
            fut = ramify.read_dataset(fut_dir)
            rep = evaluate.micro_eval(fut, _sampler(model, cfg), cfg.eval.n_samples, cfg.seed,
                                      micro_agents(cfg, fut.n_agents))
            return evaluate.write_report(rep, root / "reports", f"micro_{kind}")

        def do_macro(kind=kind, roll=roll):
            _, truth = load_trajectories(truth_path)
            _, pred = load_trajectories(roll)
            t_series, p_series = evaluate.macro_series(engine, truth), evaluate.macro_series(engine, pred)
            rep = evaluate.MacroReport(engine.kind, t_series, p_series, evaluate.ensemble_smape(t_series, p_series),
                                       evaluate.macro_noise_floor(t_series, cfg.seed), kind)
            return evaluate.write_report(rep, root / "reports", f"macro_{kind}")

        stage(f"train-{kind}", fp_train, do_train)
        stage(f"rollout-{kind}", fp_roll, do_rollout)
        stage(f"eval-micro-{kind}", fp_micro, do_micro)
        stage(f"eval-macro-{kind}", fp_macro, do_macro)

    fp_ar1 = _digest(["baseline-ar1", fp_ram, fp_truth])

    def do_ar1():
        ds = ramify.read_dataset(ds_dir)
        train_series = evaluate.main_branch_series(engine, ds.main)
        x0 = {n: v[-1] for n, v in train_series.items()}
        models, pred = evaluate.ar1_ensemble(train_series, x0, cfg.eval.horizon, cfg.eval.runs, cfg.seed)
        _, truth = load_trajectories(truth_path)
        t_series = evaluate.macro_series(engine, truth)
        rep = evaluate.Ar1Report(models, evaluate.MacroReport(
            engine.kind, t_series, pred, evaluate.ensemble_smape(t_series, pred), None, "ar1"))
        return evaluate.write_report(rep, root / "reports", "ar1")

    stage("baseline-ar1", fp_ar1, do_ar1)


# ---- export ------------------------------------------------------------------

def _grid_rows(states: list, run: int | None = None):
    rows = []
    for s in sorted(states, key=lambda s: s.t):
        for rec in state_records(s):
            row = {"t": rec["t"], "id": rec["id"], "type": rec["type"], "x": rec["x"], "y": rec["y"]}
            if "phase" in rec:
                row["phase"] = rec["phase"]
            if run is not None:
                row = {"run": run, **row}
            rows.append(row)
    return rows


def _write_csv(path: Path, rows: list[dict], header: list[str] | None = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header or list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def export_plot_data(source, out_dir, fmt: str = "csv", timesteps=None, grid_run: int = 0) -> list[Path]:
    """Long-form CSVs for external plotting.

    * snapshot ``.jsonl`` or ramification dataset dir -> ``grid.csv`` (t, id, type, x, y[, phase])
    * ``.rollout`` ensemble -> ``series_<name>.csv`` (run, t, value) per macro series, plus
      ``grid.csv`` for run ``grid_run``
    * macro report ``.json`` -> ``mean_series.csv`` (source, series, t, value)
    """
    if fmt != "csv":
        raise ExportError(f"unknown export format {fmt!r}; supported: csv")
    src, out = Path(source), Path(out_dir)
    keep = None if timesteps is None else set(int(t) for t in timesteps)

    def select(states):
        return [s for s in states if keep is None or s.t in keep]

    if src.is_dir():
        ds = ramify.read_dataset(src)
        return [_write_csv(out / "grid.csv", _grid_rows(select(ds.main)))]
    if src.suffix == ".jsonl":
        _, states = read_snapshot(src)
        return [_write_csv(out / "grid.csv", _grid_rows(select(states)))]
    if src.suffix == ".rollout":
        meta, trajs = load_trajectories(src)
        engine = abm.make_engine(meta["model"], meta["params"])
        series = evaluate.macro_series(engine, trajs)
        files = []
        for name in sorted(series):
            v = series[name]
            rows = [{"run": r, "t": j + 1, "value": repr(float(v[r, j]))}
                    for r in range(v.shape[0]) for j in range(v.shape[1])]
            files.append(_write_csv(out / f"series_{name}.csv", rows))
        if not 0 <= grid_run < len(trajs):
            raise ExportError(f"run {grid_run} outside 0..{len(trajs) - 1}")
        files.append(_write_csv(out / "grid.csv", _grid_rows(select(trajs[grid_run]), grid_run)))
        return files
    if src.suffix == ".json":
        rep = json.loads(src.read_text())
        if "mean_series" not in rep:
            raise ExportError(f"{src} has no per-timestep series to export")
        rows = [{"source": source_name, "series": name, "t": j + 1, "value": repr(float(v))}
                for source_name in sorted(rep["mean_series"])
                for name in sorted(rep["mean_series"][source_name])
                for j, v in enumerate(rep["mean_series"][source_name][name])]
        return [_write_csv(out / "mean_series.csv", rows)]
    raise ExportError(f"do not know how to export {src}")


__all__ = [
    "ExportError", "Lock", "PipelineError", "RunDir", "export_plot_data", "load_trajectories",
    "run_pipeline", "save_trajectories", "sha256_file",
]
