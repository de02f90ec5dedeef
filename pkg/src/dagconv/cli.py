"""Command-line entry point.

Every :class:`~dagconv.harness.ExperimentConfig` field is a flag
(``--n-shifts 30``, ``--transposed true``).  ``--config FILE`` loads a
``key = value`` file first; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .dag import sample_er_dag, save_dag
from .data import load_task, read_manifest, save_task
from .errors import DagConvError, ParameterError
from .harness import (ExperimentConfig, _fmt_value, evaluate, fit_model, format_table, make_task, run_experiment,
                      sweep, table1)
from .signal import reachability

log = logging.getLogger("dagconv")


def _add_config_flags(p):
    p.add_argument("--config", help="key = value file applied before the flags")
    g = p.add_argument_group("experiment config")
    for f in fields(ExperimentConfig):
        g.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, metavar=f.name.upper(),
                       help=f"(default: {f.default})")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    over = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return cfg.with_strings(over)


def _methods(text):
    return [m.strip() for m in text.split(",") if m.strip()] if text else None


def _seed(args, cfg):
    return cfg.realization_seeds()[0] if args.seed is None else args.seed


def _progress(method, value, rep):
    st = rep.stats()
    at = "" if value is None else f" @ {value}"
    print(f"{method}{at}: {rep.metric_name} mean {st['mean']:.4f} std {st['std']:.4f} "
          f"median {st['median']:.4f} ({st['n']} runs)", flush=True)


# -- subcommands --------------------------------------------------------------

def cmd_show_config(args):
    sys.stdout.write(_config(args).dumps())


def cmd_gen_graph(args):
    cfg = _config(args)
    dag = sample_er_dag(cfg.n, cfg.p, cfg.weights(), seed=_seed(args, cfg))
    save_dag(dag, args.out)
    print(f"wrote {args.out}: {dag.n} nodes, {dag.num_edges} edges")


def cmd_gen_data(args):
    cfg = _config(args)
    seed = _seed(args, cfg)
    task, _ = make_task(cfg, seed)
    save_task(task, args.out, {"seed": seed, **{f.name: _fmt_value(getattr(cfg, f.name)) for f in fields(cfg)}})
    print(f"wrote {cfg.task} data ({cfg.m} samples, seed {seed}) to {args.out}")


def _task_and_config(args):
    """Task from ``--data`` (its manifest supplies the config) or generated from the flags."""
    if args.data:
        meta = read_manifest(args.data)
        names = {f.name for f in fields(ExperimentConfig)}
        cfg = ExperimentConfig().with_strings({k: v for k, v in meta.items() if k in names})
        over = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
        cfg = cfg.with_strings(over)
        if meta.get("kind", cfg.task) != cfg.task:
            raise ParameterError(f"{args.data} holds {meta['kind']} data, not {cfg.task}")
        task = load_task(args.data)
        seed = int(meta.get("seed", 0)) if args.seed is None else args.seed
        return cfg, task, reachability(task.dag), seed
    cfg = _config(args)
    seed = _seed(args, cfg)
    task, reach = make_task(cfg, seed)
    return cfg, task, reach, seed


def cmd_train(args):
    cfg, task, reach, seed = _task_and_config(args)
    if cfg.model == "ls":
        raise ParameterError("train builds a network; score the LS baseline with table1 or sweep-noise")
    model, hist, seconds = fit_model(cfg, task, reach, seed)
    metric = evaluate(cfg, model, task)
    save_checkpoint(model, args.checkpoint)
    if not args.data:
        save_dag(task.dag, Path(args.checkpoint).with_suffix(".graph.txt"))
    name = "nmse" if cfg.task == "diffusion" else "accuracy"
    print(model.summary())
    print(f"best epoch {hist.best_epoch}, val loss {hist.best_val_loss:.6g}, train {seconds:.2f} s")
    print(f"test {name} {metric:.6f}")
    print(f"checkpoint {args.checkpoint}")


def cmd_eval(args):
    meta = read_manifest(args.data)
    names = {f.name for f in fields(ExperimentConfig)}
    cfg = ExperimentConfig().with_strings({k: v for k, v in meta.items() if k in names})
    task = load_task(args.data)
    model = load_checkpoint(args.checkpoint, task.dag)
    if (model.head is None) != (cfg.task == "diffusion"):
        raise ParameterError(f"checkpoint {model.name!r} does not fit a {cfg.task} dataset")
    idx = {"train": task.splits.train, "val": task.splits.val, "test": task.splits.test,
           "all": np.arange(task.y.shape[0])}[args.split]
    name = "nmse" if cfg.task == "diffusion" else "accuracy"
    print(f"{args.split} {name} {evaluate(cfg, model, task, idx):.6f}")


def cmd_run(args):
    cfg = _config(args)
    out = Path(cfg.output)
    csv_path = out / f"run_{cfg.task}_{cfg.method_name()}.csv"
    rep = run_experiment(cfg, csv_path)
    _progress(rep.method, None, rep)
    print(f"csv {csv_path}")


def cmd_table1(args):
    cfg = _config(args)
    tasks = tuple(_methods(args.tasks))
    res = table1(cfg, cfg.output, _methods(args.methods), tasks, progress=_progress)
    print(format_table(res))


def _sweep_cmd(kind):
    def run(args):
        cfg = _config(args)
        grid = [float(v) for v in args.grid.split(",")] if args.grid else None
        sweep(kind, cfg, cfg.output, _methods(args.methods), grid, progress=_progress)
        print(f"csv files in {cfg.output}")
    return run


def build_parser():
    ap = argparse.ArgumentParser(prog="dagconv", description="Convolutional learning on directed acyclic graphs.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("show-config", help="print the effective configuration")
    _add_config_flags(p)
    p.set_defaults(func=cmd_show_config)

    p = sub.add_parser("gen-graph", help="sample a random DAG")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen_graph)

    p = sub.add_parser("gen-data", help="sample a graph and a dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model and save a checkpoint")
    p.add_argument("--data", help="directory written by gen-data (default: generate from the flags)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a saved dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="all realizations of one configuration, written to CSV")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("table1", help="every method on both tasks")
    p.add_argument("--methods", help="comma-separated method names, e.g. DCN,DCN-10,LS")
    p.add_argument("--tasks", default="diffusion,source-id", help="comma-separated subset of the two tasks")
    _add_config_flags(p)
    p.set_defaults(func=cmd_table1)

    for kind in ("noise", "unobserved", "density"):
        p = sub.add_parser(f"sweep-{kind}", help=f"{kind} sweep, one CSV per method")
        p.add_argument("--methods")
        p.add_argument("--grid", help="comma-separated sweep values")
        _add_config_flags(p)
        p.set_defaults(func=_sweep_cmd(kind))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except DagConvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
