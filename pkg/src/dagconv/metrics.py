"""Evaluation metrics and per-realization summaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError, ShapeError


def nmse(pred, target) -> float:
    """Mean over samples of ``||y - y_hat||^2 / ||y||^2`` (rows are samples)."""
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    if target.shape[0] < 1:
        raise MetricError("no samples to score")
    power = np.sum(target * target, axis=1)
    zero = np.flatnonzero(power == 0)
    if zero.size:
        raise MetricError(f"target {int(zero[0])} has zero norm; NMSE undefined")
    err = np.sum((pred - target) ** 2, axis=1)
    return float(np.mean(err / power))


def accuracy(logits, labels) -> float:
    """Fraction of argmax hits; ``np.argmax`` already breaks ties toward the lowest index."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} vs labels {labels.shape}")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


@dataclass
class RunResult:
    realization: int
    seed: int
    metric: float = float("nan")
    seconds: float = float("nan")
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class MetricReport:
    method: str
    metric_name: str
    runs: list = field(default_factory=list)

    def values(self) -> np.ndarray:
        return np.array([r.metric for r in self.runs if r.ok], dtype=float)

    def stats(self) -> dict:
        v = self.values()
        if v.size == 0:
            nan = float("nan")
            return {"mean": nan, "std": nan, "median": nan, "q25": nan, "q75": nan, "n": 0}
        return summarize(v)

    @property
    def mean(self):
        return self.stats()["mean"]

    @property
    def median(self):
        return self.stats()["median"]

    def mean_seconds(self) -> float:
        s = [r.seconds for r in self.runs if r.ok]
        return float(np.mean(s)) if s else float("nan")


def summarize(values) -> dict:
    v = np.asarray(values, dtype=float)
    q25, med, q75 = np.percentile(v, [25, 50, 75])
    return {
        "mean": float(np.mean(v)),
        "std": float(np.std(v)),
        "median": float(med),
        "q25": float(q25),
        "q75": float(q75),
        "n": int(v.size),
    }
