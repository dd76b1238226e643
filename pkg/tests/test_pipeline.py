import csv
import json
from pathlib import Path

import pytest

from abmgdn import cli
from abmgdn.config import PRESETS, ConfigError, ExperimentConfig, apply_overrides, load_config
from abmgdn.pipeline import (
    ExportError,
    Lock,
    PipelineError,
    export_plot_data,
    load_trajectories,
    run_pipeline,
    sha256_file,
)

DESK = {
    "name": "desk",
    "model": "schelling",
    "params": {"grid_size": 15, "density": 0.75, "tolerance": 0.75},
    "seed": 3,
    "ramify": {"T": 10, "R": 50},
    "models": ["gdn"],
    "gdn": {"gnn_hidden": [16, 16], "embed_dim": 16, "cond_dim": 16, "time_dim": 16,
            "trunk": [16, 32, 16], "tau_max": 20},
    "train": {"epochs": 20, "lr_diffusion": 1e-3},
    "eval": {"T_eval": 4, "R_eval": 50, "n_samples": 50, "horizon": 5, "runs": 8},
}


def test_presets_ship_and_round_trip():
    for name in PRESETS:
        cfg = load_config(name)
        again = ExperimentConfig.from_dict(json.loads(cfg.dumps()))
        assert again == cfg and again.dumps() == cfg.dumps()
    assert load_config("xi1").params["tolerance"] == 0.625
    assert load_config("xi3").params["tolerance"] == 0.875
    assert load_config("psi4").params["psi"] == "psi4"


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config("psi9")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**DESK, "model": "boids"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**DESK, "bogus": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"model": "predprey", "params": {"psi": "psi7"}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**DESK, "models": ["gdn", "lstm"]})
    assert apply_overrides(DESK, ["train.epochs=3", "name=x"])["train"]["epochs"] == 3


def test_inline_matrix_config():
    m = [[0.2, 0.4, 0.4], [0.25, 0.55, 0.2], [0.3, 0.45, 0.25], [0.15, 0.4, 0.45]]
    from abmgdn.abm.predprey import transition_matrix

    cfg = ExperimentConfig.from_dict({"model": "predprey", "params": {"psi": transition_matrix(m).tolist()}})
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    manifest = run_pipeline(ExperimentConfig.from_dict(DESK), out, log=lambda *_: None)
    return out, manifest


def test_desk_end_to_end(desk_run):
    out, manifest = desk_run
    assert manifest["status"] == "complete"
    for stem in ("micro_gdn", "macro_gdn", "micro_engine", "macro_engine", "ar1"):
        assert (out / "reports" / f"{stem}.json").is_file() and (out / "reports" / f"{stem}.csv").is_file()
    micro = json.loads((out / "reports" / "micro_gdn.json").read_text())
    assert micro["n_entries"] == 168 * 2 * 3
    macro = json.loads((out / "reports" / "macro_gdn.json").read_text())
    assert macro["horizon"] == 5 and macro["runs"] == 8
    assert len(macro["mean_series"]["gdn"]["happy"]) == 5


def test_manifest_complete(desk_run):
    out, manifest = desk_run
    on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert on_disk == set(manifest["files"])
    for rel, digest in manifest["files"].items():
        assert sha256_file(out / rel) == digest


def test_rerun_is_noop(desk_run):
    out, _ = desk_run
    before = {p: p.stat().st_mtime_ns for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"}
    lines = []
    run_pipeline(ExperimentConfig.from_dict(DESK), out, log=lines.append)
    assert lines and all(s.startswith("[skip]") for s in lines)
    assert before == {p: p.stat().st_mtime_ns for p in before}


def test_resume_reruns_damaged_stage(desk_run):
    out, _ = desk_run
    rep = out / "reports" / "ar1.json"
    good = rep.read_bytes()
    rep.write_text("{}")
    lines = []
    run_pipeline(ExperimentConfig.from_dict(DESK), out, log=lines.append)
    assert [s for s in lines if s.startswith("[run ]")] == ["[run ] baseline-ar1"]
    assert rep.read_bytes() == good


def test_lock_blocks_second_run(tmp_path):
    with Lock(tmp_path):
        with pytest.raises(PipelineError):
            run_pipeline(ExperimentConfig.from_dict(DESK), tmp_path, log=lambda *_: None)
    assert not (tmp_path / ".lock").exists()


def test_failed_stage_recorded(tmp_path):
    bad = {**DESK, "eval": {**DESK["eval"], "R_eval": 0}}
    with pytest.raises(PipelineError):
        run_pipeline(ExperimentConfig.from_dict(bad), tmp_path, log=lambda *_: None)
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["status"] == "partial"
    assert m["stages"]["ramify"]["status"] == "complete"
    assert m["stages"]["ramify-eval"]["status"] == "failed" and "error" in m["stages"]["ramify-eval"]


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_export_grid_and_series(desk_run, tmp_path):
    out, _ = desk_run
    files = export_plot_data(out / "simulate" / "trajectory.jsonl", tmp_path / "g", timesteps=[0, 2, 4])
    rows = _rows(files[0])
    assert len(rows) == 168 * 3
    keys = [(int(r["t"]), int(r["id"])) for r in rows]
    assert keys == sorted(keys)
    files = export_plot_data(out / "rollouts" / "truth.rollout", tmp_path / "s")
    series = _rows(tmp_path / "s" / "series_happy.csv")
    assert len(series) == 8 * 5
    assert [(int(r["run"]), int(r["t"])) for r in series] == sorted((int(r["run"]), int(r["t"])) for r in series)
    assert len(_rows(tmp_path / "s" / "grid.csv")) == 168 * 6
    with pytest.raises(ExportError):
        export_plot_data(out / "simulate" / "trajectory.jsonl", tmp_path / "x", fmt="parquet")


def test_export_predprey_ensemble_rows(tmp_path):
    from abmgdn import abm
    from abmgdn.evaluate import engine_rollout
    from abmgdn.pipeline import save_trajectories
    from abmgdn.seeding import derive_rng

    eng = abm.make_engine("predprey", {"grid_size": 8, "n_agents": 40})
    init = eng.initial_state(derive_rng(0, "x"))
    trajs = engine_rollout(eng, init, 25, 100, 0)
    save_trajectories(tmp_path / "e.rollout", trajs, "predprey", abm.params_to_dict(eng.params))
    meta, back = load_trajectories(tmp_path / "e.rollout")
    assert meta["model"] == "predprey" and len(back) == 100 and len(back[0]) == 26
    export_plot_data(tmp_path / "e.rollout", tmp_path / "o")
    for kind in ("prey_active", "predator_active"):
        assert len(_rows(tmp_path / "o" / f"series_{kind}.csv")) == 100 * 25


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["run", "--config", "xi2", "--print-config"]) == 0
    assert json.loads(capsys.readouterr().out)["params"]["tolerance"] == 0.75
    assert cli.main(["run", "--config", "nope"]) == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1
    assert cli.main(["train", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "m")]) == 2
    assert cli.main(["export", "--input", str(tmp_path), "--out", str(tmp_path), "--format", "xml"]) == 1


def test_cli_default_output_root(tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    d = {**DESK, "ramify": {"T": 2, "R": 3}, "train": {"epochs": 1, "lr_diffusion": 1e-3},
         "eval": {"T_eval": 2, "R_eval": 4, "n_samples": 4, "horizon": 2, "runs": 2}}
    cfg.write_text(json.dumps(d))
    monkeypatch.setenv("ABMGDN_OUTPUT_ROOT", str(tmp_path / "root"))
    assert cli.main(["run", "--config", str(cfg), "--quiet"]) == 0
    (run_dir,) = list((tmp_path / "root").iterdir())
    assert run_dir.name.startswith("desk-") and (run_dir / "manifest.json").is_file()
    assert Path(run_dir / "config.json").is_file()
