"""Command-line driver.

Exit codes: 0 success, 1 usage or configuration error, 2 stage failure.
``ABMGDN_OUTPUT_ROOT`` sets the default output root for ``run``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, abm, evaluate, ramify
from .config import ConfigError, ExperimentConfig, load_config
from .pipeline import ExportError
from .seeding import derive_rng

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _abm_args(p):
    p.add_argument("--config", help="preset name (xi1..xi3, psi1..psi4) or JSON config path")
    p.add_argument("--model", choices=abm.MODELS)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="ABM parameter (JSON value), repeatable")
    p.add_argument("--seed", type=int)


def _params(args) -> tuple[str, dict, int]:
    """ABM kind, params and seed from --config and/or --model/--param."""
    if args.config:
        cfg = load_config(args.config)
        model, params, seed = cfg.model, dict(cfg.params), cfg.seed
    elif args.model:
        model, params, seed = args.model, {}, 0
    else:
        raise UsageError("give --config or --model")
    for item in args.param:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--param {item!r} is not KEY=VALUE")
        try:
            params[key] = json.loads(raw)
        except json.JSONDecodeError:
            params[key] = raw
    if args.seed is not None:
        seed = args.seed
    return model, params, seed


def _engine(model, params):
    try:
        return abm.make_engine(model, params)
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"invalid {model} params: {exc}") from exc


def cmd_simulate(args) -> int:
    from .abm.snapshot import write_snapshot

    model, params, seed = _params(args)
    engine = _engine(model, params)
    init = engine.initial_state(derive_rng(seed, "train/init"))
    states = abm.simulate(engine, args.steps, derive_rng(seed, "simulate"), init)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_snapshot(args.out, model, abm.params_to_dict(engine.params), seed, states)
    print(f"wrote {len(states)} states to {args.out}")
    return EXIT_OK


def cmd_ramify(args) -> int:
    if args.source:
        train_ds = ramify.read_dataset(args.source)
        engine = _engine(train_ds.model, train_ds.params)
        ds = ramify.future_ramification(engine, train_ds, args.T_eval, args.R_eval, args.seed)
    else:
        model, params, seed = _params(args)
        engine = _engine(model, params)
        ds = ramify.generate(engine, args.T, args.R, seed)
    ramify.write_dataset(ds, args.out)
    note = f" (truncated at terminal state, requested {ds.requested_T})" if ds.truncated else ""
    print(f"wrote ramification T={ds.T} R={ds.R}{note} to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .gdn import save_model
    from .pipeline import fit_model

    ds = ramify.read_dataset(args.dataset)
    base = {"model": ds.model, "params": ds.params, "seed": ds.seed}
    if args.config:
        d = load_config(args.config).to_dict()
        base.update({k: d[k] for k in ("gdn", "train", "gnn_only", "gnn_only_train")})
    cfg = ExperimentConfig.from_dict(base)
    tr = cfg.train
    gt = cfg.gnn_only_train
    if args.epochs is not None:
        tr, gt = replace(tr, epochs=args.epochs), replace(gt, epochs=args.epochs)
    if args.lr is not None:
        tr, gt = replace(tr, lr_diffusion=args.lr), replace(gt, lr=args.lr)
    if args.lr_gnn is not None:
        tr = replace(tr, lr_gnn=args.lr_gnn)
    if args.max_steps is not None:
        tr, gt = replace(tr, max_steps=args.max_steps), replace(gt, max_steps=args.max_steps)
    if args.seed is not None:
        tr, gt = replace(tr, seed=args.seed), replace(gt, seed=args.seed)
    gdn = cfg.gdn if args.tau_max is None else replace(cfg.gdn, tau_max=args.tau_max)
    cfg = replace(cfg, train=tr, gnn_only_train=gt, gdn=gdn)
    kind = args.ablation or "gdn"
    model, losses, fp = fit_model(kind, cfg, ds, 0)
    save_model(model, args.out, fp, {"dataset": ds.fingerprint()})
    print(f"trained {kind} for {len(losses)} steps; final loss {losses[-1]:.6g}; saved {args.out}")
    return EXIT_OK


def _subject(args, ds):
    """The thing being evaluated: a checkpoint, or the ground-truth engine."""
    if args.engine:
        return _engine(ds.model, ds.params), "engine"
    if not args.checkpoint:
        raise UsageError("give --checkpoint or --engine")
    from .gdn import load_model

    model, meta = load_model(args.checkpoint)
    smp = evaluate.as_sampler(model)
    if isinstance(smp, evaluate.DiffusionSampler):
        smp.max_rows = args.max_rows
    return smp, meta["kind"]


def cmd_rollout(args) -> int:
    from .pipeline import save_trajectories

    ds = ramify.read_dataset(args.dataset)
    subject, label = _subject(args, ds)
    trajs = evaluate.as_sampler(subject).rollout(ds.main[-1], args.steps, args.runs, args.seed)
    save_trajectories(args.out, trajs, ds.model, ds.params, {"source": label, "seed": args.seed})
    print(f"wrote {args.runs} runs x {args.steps} steps to {args.out}")
    return EXIT_OK


def cmd_eval_micro(args) -> int:
    fut = ramify.read_dataset(args.dataset)
    subject, label = _subject(args, fut)
    agents = None
    if args.agents is not None and args.agents < fut.n_agents:
        agents = sorted(derive_rng(args.seed, "micro/agents").choice(fut.n_agents, args.agents, replace=False))
    rep = evaluate.micro_eval(fut, subject, args.samples, args.seed, agents)
    rep.noise_floor = evaluate.micro_noise_floor(fut, args.seed, agents).mean
    evaluate.write_report(rep, args.out, f"micro_{label}")
    print(f"micro EMD {label}: mean {rep.mean:.5f} over {rep.n_entries} entries "
          f"(split-half floor {rep.noise_floor:.5f})")
    return EXIT_OK


def cmd_eval_macro(args) -> int:
    ds = ramify.read_dataset(args.dataset)
    subject, label = _subject(args, ds)
    engine = _engine(ds.model, ds.params)
    rep = evaluate.macro_eval(engine, subject, ds.main[-1], args.horizon, args.runs, args.seed, label=label)
    evaluate.write_report(rep, args.out, f"macro_{label}")
    print(f"macro sMAPE {label}: {rep.smape:.5f} (split-ensemble floor {rep.noise_floor:.5f})")
    return EXIT_OK


def cmd_baseline_ar1(args) -> int:
    ds = ramify.read_dataset(args.dataset)
    engine = _engine(ds.model, ds.params)
    models, rep = evaluate.ar1_baseline(engine, ds, args.horizon, args.runs, args.seed)
    evaluate.write_report(evaluate.Ar1Report(models, rep), args.out, "ar1")
    fits = ", ".join(f"{n}: phi={m.phi:.4f} sigma={m.sigma:.4f}" for n, m in models.items())
    print(f"AR(1) sMAPE {rep.smape:.5f} ({fits})")
    return EXIT_OK


def cmd_export(args) -> int:
    from .pipeline import export_plot_data

    ts = None if args.timesteps is None else [int(t) for t in args.timesteps.split(",")]
    for f in export_plot_data(args.input, args.out, args.format, ts, args.run):
        print(f)
    return EXIT_OK


def cmd_run(args) -> int:
    from .pipeline import run_pipeline

    cfg = load_config(args.config, args.set)
    if args.print_config:
        sys.stdout.write(cfg.dumps())
        return EXIT_OK
    manifest = run_pipeline(cfg, args.out, log=print if not args.quiet else (lambda *_: None))
    print(f"pipeline {manifest['status']}: {len(manifest['files'])} files")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = Parser(prog="abmgdn", description="Graph diffusion surrogates for agent-based models.")
    p.add_argument("--version", action="version", version=f"abmgdn {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("simulate", help="ground-truth trajectory snapshot (JSONL)")
    _abm_args(s)
    s.add_argument("--steps", type=int, default=30)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("ramify", help="training ramification, or a future one with --from")
    _abm_args(s)
    s.add_argument("--T", type=int, default=10)
    s.add_argument("--R", type=int, default=500)
    s.add_argument("--from", dest="source", metavar="DATASET", help="training dataset to continue from")
    s.add_argument("--T-eval", type=int, default=25)
    s.add_argument("--R-eval", type=int, default=500)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_ramify)

    s = sub.add_parser("train", help="train the GDN or an ablation on a ramification")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--ablation", choices=("diffusion-only", "gnn-only"))
    s.add_argument("--config", help="take network and training sections from this config")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float, help="diffusion (or gnn-only) learning rate")
    s.add_argument("--lr-gnn", type=float)
    s.add_argument("--tau-max", type=int)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_train)

    for name, fn, helptext in (("rollout", cmd_rollout, "free-running ensemble from the dataset's last state"),
                               ("eval-micro", cmd_eval_micro, "per-agent EMD on a future ramification"),
                               ("eval-macro", cmd_eval_macro, "sMAPE of ensemble-mean macro series")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--dataset", required=True)
        g = s.add_mutually_exclusive_group()
        g.add_argument("--checkpoint")
        g.add_argument("--engine", action="store_true", help="evaluate the ground-truth engine (self-test)")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--max-rows", type=int, default=1 << 16)
        s.add_argument("--out", required=True)
        s.set_defaults(fn=fn)
        if name == "rollout":
            s.add_argument("--steps", type=int, default=25)
            s.add_argument("--runs", type=int, default=100)
        elif name == "eval-micro":
            s.add_argument("--samples", type=int, default=500)
            s.add_argument("--agents", type=int, help="evaluate a seeded subset of this many agents")
        else:
            s.add_argument("--horizon", type=int, default=25)
            s.add_argument("--runs", type=int, default=100)

    s = sub.add_parser("baseline-ar1", help="AR(1) macro forecast fitted on the training main branch")
    s.add_argument("--dataset", required=True)
    s.add_argument("--horizon", type=int, default=25)
    s.add_argument("--runs", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_baseline_ar1)

    s = sub.add_parser("export", help="long-form CSV plot data")
    s.add_argument("--input", required=True, help="snapshot .jsonl, dataset dir, .rollout or macro report .json")
    s.add_argument("--out", required=True)
    s.add_argument("--format", default="csv")
    s.add_argument("--timesteps", help="comma-separated t values for grid exports")
    s.add_argument("--run", type=int, default=0, help="rollout run for the grid export")
    s.set_defaults(fn=cmd_export)

    s = sub.add_parser("run", help="full resumable pipeline")
    s.add_argument("--config", required=True, help="preset name or JSON config path")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry (dotted key, JSON value)")
    s.add_argument("--out", help="output directory (default $ABMGDN_OUTPUT_ROOT/<name>-<fingerprint>)")
    s.add_argument("--print-config", action="store_true")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, ConfigError, ExportError) as exc:
        print(f"abmgdn {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # stage failure
        print(f"abmgdn {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
