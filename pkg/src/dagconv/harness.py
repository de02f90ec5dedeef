"""Experiment configuration, multi-realization runs, sweeps and CSV output."""

from __future__ import annotations

import csv
import dataclasses
import logging
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .dag import WeightLaw, sample_er_dag
from .data import gen_diffusion, gen_source_id
from .errors import DagConvError, ParameterError
from .metrics import MetricReport, RunResult, accuracy, nmse, summarize
from .models import ArchConfig, build_dcn, build_fbgcnn, build_gcn, build_mlp, ls_fit, ls_predict
from .nn import TrainConfig, train
from .signal import predecessor_masks, reachability, transitive_closure

log = logging.getLogger(__name__)

TASKS = ("diffusion", "source-id")
MODELS = ("dcn", "ls", "fbgcnn", "gcn", "mlp")

NOISE_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
UNOBSERVED_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
DENSITY_GRID = (0.1, 0.3, 0.5, 0.7)

TABLE1_METHODS = {
    "diffusion": ["DCN", "DCN-30", "DCN-10", "DCN-T", "DCN-30-T", "DCN-10-T", "LS", "FB-GCNN", "GCN", "MLP"],
    "source-id": ["DCN", "DCN-30", "DCN-10", "DCN-T", "DCN-30-T", "DCN-10-T", "FB-GCNN-T", "GCN-T", "MLP"],
}
SWEEP_METHODS = {
    "noise": ["DCN", "LS", "FB-GCNN-4"],
    "unobserved": ["DCN-T", "DCN-30-T", "DCN-20-T", "DCN-10-T"],
    "density": ["DCN-T", "DCN-20-T", "FB-GCNN-5-T", "FB-GCNN-2-T"],
}


@dataclass
class ExperimentConfig:
    task: str = "diffusion"
    model: str = "dcn"
    n_shifts: int = 0  # 0 -> every node
    transposed: bool = False
    hidden: int = 16
    layers: int = 3
    order: int = 5
    ls_support: str = "oracle"  # or "all"
    ls_ridge: float = 0.0
    lr: float = 1e-3
    epochs: int = 60
    patience: int = 25
    batch_size: int = 50
    n: int = 100
    p: float = 0.2
    weight_law: str = "uniform"
    weight_low: float = 0.2
    weight_high: float = 0.5
    weight_signed: bool = True
    m: int = 2000
    noise: float = 0.05
    source_noise: float = 0.0
    per_signal_noise: bool = True
    n_src_nodes: int = 20
    gt_shifts: int = 25
    candidates: int = 20
    unobserved_fraction: float = 0.0  # > 0 overrides ``candidates``
    mask_channel: bool = False
    frac_train: float = 0.7
    frac_val: float = 0.2
    frac_test: float = 0.1
    realizations: int = 25
    base_seed: int = 0
    seeds: str = ""  # explicit comma-separated seeds, overrides base_seed
    workers: int = 1
    output: str = "results"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ParameterError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.model not in MODELS:
            raise ParameterError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.realizations < 1:
            raise ParameterError("realizations must be >= 1")
        if self.ls_support not in ("oracle", "all"):
            raise ParameterError(f"ls_support must be 'oracle' or 'all', got {self.ls_support!r}")
        if self.model == "ls" and self.task != "diffusion":
            raise ParameterError("the LS baseline is a regression model; use it with task = diffusion")

    def realization_seeds(self) -> list:
        if self.seeds:
            return [int(s) for s in self.seeds.split(",")]
        return [self.base_seed + r for r in range(self.realizations)]

    def weights(self) -> WeightLaw:
        return WeightLaw(self.weight_law, self.weight_low, self.weight_high, self.weight_signed)

    def arch(self) -> ArchConfig:
        return ArchConfig(hidden=self.hidden, layers=self.layers, order=self.order)

    def train_config(self, seed) -> TrainConfig:
        loss = "mse" if self.task == "diffusion" else "cross-entropy"
        return TrainConfig(lr=self.lr, epochs=self.epochs, patience=min(self.patience, self.epochs), loss=loss,
                           batch_size=self.batch_size, seed=seed)

    def method_name(self) -> str:
        suffix = "-T" if self.transposed else ""
        if self.model == "dcn":
            return "DCN" + (f"-{self.n_shifts}" if 0 < self.n_shifts < self.n else "") + suffix
        if self.model == "fbgcnn":
            return f"FB-GCNN-{self.order}" + suffix
        return {"ls": "LS", "gcn": "GCN", "mlp": "MLP"}[self.model] + suffix

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    # -- flat key = value files ----------------------------------------------

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_fmt_value(getattr(self, f.name))}\n" for f in fields(self))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"config line {lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key] = val
        return (base or cls()).with_strings(values)

    @classmethod
    def load(cls, path, base=None) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text(), base)

    def with_strings(self, values: dict) -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(self)}
        parsed = {}
        for key, val in values.items():
            if key not in types:
                raise ParameterError(f"unknown config key {key!r}")
            parsed[key] = _parse_value(types[key], val, key)
        return self.replace(**parsed)


def _fmt_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(typ, val, key):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(val)
        if typ == "float":
            return float(val)
    except ValueError:
        raise ParameterError(f"config key {key!r}: cannot parse {val!r} as {typ}") from None
    return val


_METHOD_RE = re.compile(r"^(DCN|FB-GCNN|GCN|MLP|LS)(?:-(\d+))?(-T)?$", re.IGNORECASE)


def method_overrides(name: str) -> dict:
    """Config overrides for a method name such as ``DCN-30-T`` or ``FB-GCNN-5``."""
    m = _METHOD_RE.match(name.strip())
    if not m:
        raise ParameterError(f"unrecognised method name {name!r}")
    base, num, t = m.group(1).upper(), m.group(2), bool(m.group(3))
    out = {"transposed": t}
    if base == "DCN":
        out.update(model="dcn", n_shifts=int(num) if num else 0)
    elif base == "FB-GCNN":
        out["model"] = "fbgcnn"
        if num:
            out["order"] = int(num)
    elif num:
        raise ParameterError(f"{base} takes no numeric suffix")
    else:
        out["model"] = base.lower()
    return out


# -- single realization -------------------------------------------------------

def make_task(cfg: ExperimentConfig, seed: int):
    """Graph and dataset for one realization; the seed fixes both."""
    graph_ss, data_ss, _ = np.random.SeedSequence(seed).spawn(3)
    dag = sample_er_dag(cfg.n, cfg.p, cfg.weights(), seed=graph_ss)
    closure = transitive_closure(dag)
    reach = reachability(dag)
    fractions = (cfg.frac_train, cfg.frac_val, cfg.frac_test)
    if cfg.task == "diffusion":
        task = gen_diffusion(dag, cfg.m, cfg.n_src_nodes, cfg.noise, data_ss, n_shifts=cfg.gt_shifts,
                             closure=closure, reach=reach, per_signal_noise=cfg.per_signal_noise,
                             fractions=fractions)
    else:
        cand = cfg.unobserved_fraction if cfg.unobserved_fraction > 0 else cfg.candidates
        task = gen_source_id(dag, cfg.m, cand, data_ss, noise_power=cfg.source_noise,
                             n_shifts=cfg.gt_shifts, closure=closure, reach=reach, mask_channel=cfg.mask_channel,
                             fractions=fractions)
    return task, reach


def build_model(cfg: ExperimentConfig, task, reach, seed):
    model_ss = np.random.SeedSequence(seed).spawn(3)[2]
    rng = np.random.default_rng(model_ss)
    dag = task.dag
    arch = cfg.arch()
    classify = cfg.task == "source-id"
    cand = task.candidates if classify else None
    f_in = task.inputs().shape[2] if classify else 1
    if cfg.model == "dcn":
        return build_dcn(dag, task.closure, n_shifts=cfg.n_shifts or None, transposed=cfg.transposed, f_in=f_in,
                         arch=arch, candidates=cand, seed=rng, reach=reach)
    if cfg.model == "fbgcnn":
        return build_fbgcnn(dag, transposed=cfg.transposed, f_in=f_in, arch=arch, candidates=cand, seed=rng)
    if cfg.model == "gcn":
        return build_gcn(dag, transposed=cfg.transposed, f_in=f_in, arch=arch, candidates=cand, seed=rng)
    if cfg.model == "mlp":
        return build_mlp(dag.n, f_in=f_in, arch=arch, candidates=cand, seed=rng)
    raise ParameterError(f"model {cfg.model!r} is not a neural network")


def task_arrays(cfg, task):
    """``(inputs, targets, eval_targets)`` for the whole dataset."""
    if cfg.task == "diffusion":
        return task.x_obs, task.y_obs, task.y
    return task.inputs(), task.labels, task.labels


def fit_model(cfg: ExperimentConfig, task, reach, seed):
    """Build, calibrate and train a network on the task's train/val split.

    Returns ``(model, history, seconds)``; the timing covers ``train`` only.
    """
    s = task.splits
    x, y, _ = task_arrays(cfg, task)
    model = build_model(cfg, task, reach, seed)
    model.calibrate(x[s.train][:200])
    t0 = time.perf_counter()
    hist = train(model, (x[s.train], y[s.train]), (x[s.val], y[s.val]), cfg.train_config(seed))
    return model, hist, time.perf_counter() - t0


def evaluate(cfg: ExperimentConfig, model, task, idx=None) -> float:
    """Test NMSE against the clean outputs, or test accuracy."""
    idx = task.splits.test if idx is None else idx
    x, _, y_eval = task_arrays(cfg, task)
    out = model.forward(x[idx])
    return nmse(out, y_eval[idx]) if cfg.task == "diffusion" else accuracy(out, y_eval[idx])


def run_once(cfg: ExperimentConfig, realization: int, seed: int) -> RunResult:
    """Sample, generate, train and score one realization; failures are captured, not raised."""
    res = RunResult(realization, seed)
    try:
        task, reach = make_task(cfg, seed)
        s = task.splits
        if cfg.model == "ls":
            if cfg.ls_support == "oracle":
                shifts = task.filter.shifts
            else:
                shifts = predecessor_masks(task.dag, None, reach=reach)
            ridge = cfg.ls_ridge if cfg.ls_support == "oracle" else max(cfg.ls_ridge, 1e-6)
            t0 = time.perf_counter()
            fit = ls_fit(task.closure, shifts, task.x_obs[s.train], task.y_obs[s.train], ridge)
            res.seconds = time.perf_counter() - t0
            res.metric = nmse(ls_predict(fit, shifts, task.closure, task.x_obs[s.test]), task.y[s.test])
            return res
        model, _, res.seconds = fit_model(cfg, task, reach, seed)
        res.metric = evaluate(cfg, model, task)
    except (DagConvError, np.linalg.LinAlgError, FloatingPointError) as exc:
        res.error = f"{type(exc).__name__}: {exc}"
        log.warning("realization %d (seed %d) failed: %s", realization, seed, res.error)
    return res


def _job(args):
    return run_once(*args)


def run_experiment(cfg: ExperimentConfig, csv_path=None, sweep_value=None) -> MetricReport:
    """Run every realization of ``cfg``; optionally write the CSV."""
    seeds = cfg.realization_seeds()
    jobs = [(cfg, r, s) for r, s in enumerate(seeds)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    results.sort(key=lambda r: r.realization)
    report = MetricReport(cfg.method_name(), "nmse" if cfg.task == "diffusion" else "accuracy", results)
    failed = [r for r in results if not r.ok]
    if failed:
        log.warning("%s: %d of %d realizations failed and are excluded", report.method, len(failed), len(results))
    if csv_path is not None:
        write_csv(csv_path, [(sweep_value, report)])
    return report


# -- CSV ----------------------------------------------------------------------

CSV_FIELDS = ["kind", "method", "sweep_value", "realization", "seed", "metric_name", "metric", "seconds",
              "mean", "std", "median", "q25", "q75", "n", "error"]


def _num(v):
    return "" if v is None else repr(float(v))


def write_csv(path, entries) -> None:
    """One row per realization followed by one aggregate row, for each ``(sweep_value, report)``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for value, rep in entries:
            sv = "" if value is None else repr(value)
            for r in rep.runs:
                w.writerow(["run", rep.method, sv, r.realization, r.seed, rep.metric_name,
                            _num(r.metric) if r.ok else "", _num(r.seconds) if r.ok else "",
                            "", "", "", "", "", "", r.error])
            st = rep.stats()
            w.writerow(["aggregate", rep.method, sv, "", "", rep.metric_name, "", _num(rep.mean_seconds()),
                        _num(st["mean"]), _num(st["std"]), _num(st["median"]), _num(st["q25"]),
                        _num(st["q75"]), st["n"], ""])


def read_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def reaggregate(rows) -> dict:
    """Recompute aggregate statistics from the ``run`` rows, keyed by ``(method, sweep_value)``."""
    groups = {}
    for row in rows:
        if row["kind"] == "run" and row["metric"]:
            groups.setdefault((row["method"], row["sweep_value"]), []).append(float(row["metric"]))
    return {k: summarize(v) for k, v in groups.items()}


# -- method tables and sweeps -----------------------------------------------------

def run_methods(cfg, methods, out_dir, tag, sweep_key=None, grid=(None,), progress=None):
    """Run each method over the grid; one CSV per method named ``<tag>_<method>.csv``."""
    out = {}
    for method in methods:
        entries = []
        for value in grid:
            over = method_overrides(method)
            if sweep_key is not None:
                over[sweep_key] = value
            mcfg = cfg.replace(**over)
            rep = run_experiment(mcfg, sweep_value=value)
            rep.method = method
            entries.append((value, rep))
            if progress:
                progress(method, value, rep)
        if out_dir is not None:
            write_csv(Path(out_dir) / f"{tag}_{method}.csv", entries)
        out[method] = entries
    return out


def table1(cfg: ExperimentConfig, out_dir, methods=None, tasks=TASKS, progress=None) -> dict:
    results = {}
    for task in tasks:
        tcfg = cfg.replace(task=task)
        ms = methods if methods is not None else TABLE1_METHODS[task]
        ms = [m for m in ms if not (task == "source-id" and m.upper() == "LS")]
        results[task] = run_methods(tcfg, ms, out_dir, f"table1_{task}", progress=progress)
    return results


def sweep(kind: str, cfg: ExperimentConfig, out_dir, methods=None, grid=None, progress=None) -> dict:
    if kind == "noise":
        base, key, grid = cfg.replace(task="diffusion"), "noise", grid or NOISE_GRID
    elif kind == "unobserved":
        base, key, grid = cfg.replace(task="source-id"), "unobserved_fraction", grid or UNOBSERVED_GRID
    elif kind == "density":
        base, key, grid = cfg.replace(task="source-id"), "p", grid or DENSITY_GRID
    else:
        raise ParameterError(f"unknown sweep {kind!r}")
    return run_methods(base, methods or SWEEP_METHODS[kind], out_dir, f"sweep_{kind}", key, grid, progress)


def format_table(results: dict) -> str:
    lines = []
    for task, per_method in results.items():
        lines.append(f"{task}:")
        for method, entries in per_method.items():
            rep = entries[0][1]
            st = rep.stats()
            lines.append(f"  {method:<14} {st['mean']:.3f} +- {st['std']:.3f}   {rep.mean_seconds():6.2f} s"
                         f"   ({st['n']} runs)")
    return "\n".join(lines)
