"""Synthetic network-diffusion and source-identification tasks."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dag import Dag
from .errors import ParameterError, ShapeError
from .signal import ClosurePair, DagFilter, apply_filter, predecessor_masks, random_shift_nodes, transitive_closure

SPLIT_FRACTIONS = (0.7, 0.2, 0.1)


@dataclass
class Splits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def sizes(self):
        return len(self.train), len(self.val), len(self.test)


def split(m: int, fractions=SPLIT_FRACTIONS, seed=None) -> Splits:
    """Seeded shuffle of ``range(m)`` cut into train/validation/test."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ParameterError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")
    perm = np.random.default_rng(seed).permutation(m)
    n_tr = int(round(fractions[0] * m))
    n_va = int(round(fractions[1] * m))
    return Splits(perm[:n_tr], perm[n_tr : n_tr + n_va], perm[n_tr + n_va :])


def random_filter(dag: Dag, n_shifts=25, seed=None, reach=None, transposed=False) -> DagFilter:
    """Ground-truth filter: ``n_shifts`` uniformly chosen shifts, standard normal
    coefficients rescaled to unit norm."""
    rng = np.random.default_rng(seed)
    nodes = random_shift_nodes(dag.n, n_shifts, rng)
    h = rng.standard_normal(nodes.size)
    h /= np.linalg.norm(h)
    return DagFilter(predecessor_masks(dag, nodes, transposed, reach=reach), h)


def add_noise(s, noise_power, rng, per_signal=True):
    """``s + sigma * eps`` with ``sigma^2 = noise_power * ||s||^2 / N``.

    ``s`` is ``(M, N)``.  With ``per_signal=False`` the power is averaged over
    the batch and a single ``sigma`` is used.
    """
    if noise_power < 0:
        raise ParameterError(f"noise power must be nonnegative, got {noise_power}")
    eps = rng.standard_normal(s.shape)
    if noise_power == 0:
        return s.copy()
    power = np.sum(s * s, axis=1, keepdims=True) / s.shape[1]
    if not per_signal:
        power = np.full_like(power, power.mean())
    return s + np.sqrt(noise_power * power) * eps


@dataclass
class DiffusionTask:
    dag: Dag
    closure: ClosurePair
    filter: DagFilter
    x: np.ndarray  # clean inputs (M, N)
    y: np.ndarray  # clean outputs (M, N)
    x_obs: np.ndarray
    y_obs: np.ndarray
    noise_power: float
    splits: Splits
    seed: object = None


def gen_diffusion(dag: Dag, m=2000, n_src_nodes=20, noise_power=0.05, seed=None, *, n_shifts=25,
                  closure=None, reach=None, per_signal_noise=True, fractions=SPLIT_FRACTIONS,
                  filt: DagFilter | None = None) -> DiffusionTask:
    """Inputs are i.i.d. standard normal on the first ``n_src_nodes`` nodes, zero elsewhere."""
    if m < 10:
        raise ParameterError(f"need at least 10 samples, got {m}")
    if not 1 <= n_src_nodes <= dag.n:
        raise ParameterError(f"n_src_nodes must lie in [1, {dag.n}]")
    rng = np.random.default_rng(seed)
    closure = closure or transitive_closure(dag)
    if filt is None:
        filt = random_filter(dag, n_shifts, rng, reach)
    x = np.zeros((m, dag.n))
    x[:, :n_src_nodes] = rng.standard_normal((m, n_src_nodes))
    y = apply_filter(filt, closure, x.T).T
    x_obs = add_noise(x, noise_power, rng, per_signal_noise)
    y_obs = add_noise(y, noise_power, rng, per_signal_noise)
    splits = split(m, fractions, rng)
    return DiffusionTask(dag, closure, filt, x, y, x_obs, y_obs, noise_power, splits, seed)


@dataclass
class SourceIdTask:
    dag: Dag
    closure: ClosurePair
    filter: DagFilter
    candidates: np.ndarray  # also the unobserved (masked) nodes
    sources: np.ndarray  # node id per sample
    labels: np.ndarray  # position of the source in ``candidates``
    y: np.ndarray  # clean diffused outputs (M, N)
    y_obs: np.ndarray  # masked outputs, zero on candidates
    splits: Splits
    mask_channel: bool = False
    seed: object = None

    @property
    def observed(self) -> np.ndarray:
        keep = np.ones(self.dag.n, dtype=bool)
        keep[self.candidates] = False
        return keep

    def inputs(self) -> np.ndarray:
        """Network inputs ``(M, N, F)``; ``F = 2`` when the mask channel is on."""
        if not self.mask_channel:
            return self.y_obs[:, :, None]
        chan = np.broadcast_to(self.observed.astype(float), self.y_obs.shape)
        return np.stack([self.y_obs, chan], axis=-1)


def unobserved_nodes(n: int, fraction: float) -> np.ndarray:
    """The first ``round(fraction * n)`` nodes in topological order."""
    count = int(round(fraction * n))
    if count < 1:
        raise ParameterError(f"unobserved fraction {fraction} leaves no candidate at N={n}")
    if count >= n:
        raise ParameterError("the candidate set would cover the whole graph")
    return np.arange(count)


def gen_source_id(dag: Dag, m=2000, candidates=20, seed=None, *, noise_power=0.0, n_shifts=25, closure=None,
                  reach=None, mask_channel=False, per_signal_noise=True, fractions=SPLIT_FRACTIONS,
                  filt: DagFilter | None = None) -> SourceIdTask:
    """``candidates`` is a count (first nodes), a float fraction, or an explicit node list."""
    if isinstance(candidates, float):
        cand = unobserved_nodes(dag.n, candidates)
    elif np.isscalar(candidates):
        cand = np.arange(int(candidates))
    else:
        cand = np.asarray(candidates, dtype=int)
    if cand.size == 0:
        raise ParameterError("candidate set is empty")
    if cand.size >= dag.n:
        raise ParameterError("the candidate set would cover the whole graph")
    if cand.min() < 0 or cand.max() >= dag.n or np.unique(cand).size != cand.size:
        raise ParameterError("candidates must be distinct valid node ids")
    rng = np.random.default_rng(seed)
    closure = closure or transitive_closure(dag)
    if filt is None:
        filt = random_filter(dag, n_shifts, rng, reach)
    labels = rng.integers(0, cand.size, size=m)
    sources = cand[labels]
    x = np.zeros((m, dag.n))
    x[np.arange(m), sources] = 1.0
    y = apply_filter(filt, closure, x.T).T
    y_obs = add_noise(y, noise_power, rng, per_signal_noise)
    y_obs[:, cand] = 0.0
    splits = split(m, fractions, rng)
    return SourceIdTask(dag, closure, filt, cand, sources, labels, y, y_obs, splits, mask_channel, seed)


# -- archive ------------------------------------------------------------------

def _dump(a: np.ndarray) -> str:
    a = np.atleast_2d(a)
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in a)


def save_task(task, directory, manifest: dict) -> None:
    """Text manifest plus one decimal file per tensor; floats use ``repr`` so reload is exact."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    kind = "diffusion" if isinstance(task, DiffusionTask) else "source-id"
    meta = {"kind": kind, **manifest}
    (d / "manifest.txt").write_text("".join(f"{k} = {v}\n" for k, v in meta.items()))
    from .dag import save_dag

    save_dag(task.dag, d / "graph.txt")
    (d / "filter.txt").write_text(task.filter.to_text())
    for name in ("train", "val", "test"):
        (d / f"split_{name}.txt").write_text(" ".join(map(str, getattr(task.splits, name).tolist())) + "\n")
    if kind == "diffusion":
        arrays = {"x": task.x, "y": task.y, "x_obs": task.x_obs, "y_obs": task.y_obs}
    else:
        arrays = {"y": task.y, "y_obs": task.y_obs}
        (d / "candidates.txt").write_text(" ".join(map(str, task.candidates.tolist())) + "\n")
        (d / "labels.txt").write_text(" ".join(map(str, task.labels.tolist())) + "\n")
    for name, arr in arrays.items():
        (d / f"{name}.txt").write_text(_dump(arr) + "\n")


def read_manifest(directory) -> dict:
    out = {}
    for line in (Path(directory) / "manifest.txt").read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def load_task(directory):
    from .dag import load_dag
    from .signal import parse_filter

    d = Path(directory)
    meta = read_manifest(d)
    dag = load_dag(d / "graph.txt")
    closure = transitive_closure(dag)
    filt = parse_filter((d / "filter.txt").read_text(), dag)

    def ints(name):
        return np.array((d / name).read_text().split(), dtype=int)

    def mat(name):
        return np.loadtxt(d / name, ndmin=2)

    splits = Splits(ints("split_train.txt"), ints("split_val.txt"), ints("split_test.txt"))
    if meta["kind"] == "diffusion":
        return DiffusionTask(dag, closure, filt, mat("x.txt"), mat("y.txt"), mat("x_obs.txt"), mat("y_obs.txt"),
                             float(meta.get("noise", 0.0)), splits, meta.get("seed"))
    cand = ints("candidates.txt")
    labels = ints("labels.txt")
    if labels.shape[0] != mat("y.txt").shape[0]:
        raise ShapeError("labels and outputs disagree on the sample count")
    return SourceIdTask(dag, closure, filt, cand, cand[labels], labels, mat("y.txt"), mat("y_obs.txt"), splits,
                        meta.get("mask_channel", "false").lower() in ("true", "1"), meta.get("seed"))
