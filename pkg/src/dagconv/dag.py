"""Directed acyclic graphs stored in topological order.

A :class:`Dag` keeps its weighted adjacency strictly lower-triangular, so the
storage index of a node doubles as its topological position.  ``A[i, j] != 0``
means there is an edge ``j -> i``.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AcyclicityError, ParameterError


@dataclass(frozen=True)
class WeightLaw:
    """Distribution of edge weights.

    ``kind="uniform"`` draws magnitudes from ``Uniform(low, high)`` and, when
    ``signed`` is true, multiplies by an independent Rademacher sign.
    ``kind="unit"`` gives every edge weight 1.
    """

    kind: str = "uniform"
    low: float = 0.2
    high: float = 0.5
    signed: bool = True

    def __post_init__(self):
        if self.kind not in ("uniform", "unit"):
            raise ParameterError(f"unknown weight law {self.kind!r}")
        if self.kind == "uniform" and not 0 <= self.low <= self.high:
            raise ParameterError(f"need 0 <= low <= high, got {self.low}, {self.high}")

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "unit":
            return np.ones(size)
        w = rng.uniform(self.low, self.high, size)
        if self.signed:
            w *= rng.choice([-1.0, 1.0], size)
        return w


UNIT_WEIGHTS = WeightLaw(kind="unit")


@dataclass(frozen=True, eq=False)
class Dag:
    """A DAG whose adjacency is strictly lower-triangular in storage order.

    ``order[s]`` is the original label of the node stored at index ``s``.
    """

    adj: np.ndarray
    order: np.ndarray = field(default=None)

    def __post_init__(self):
        adj = np.array(self.adj, dtype=float)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise ParameterError(f"adjacency must be a non-empty square matrix, got {adj.shape}")
        if np.any(np.triu(adj) != 0):
            raise AcyclicityError("adjacency is not strictly lower-triangular in storage order")
        order = np.arange(adj.shape[0]) if self.order is None else np.asarray(self.order, dtype=int)
        if sorted(order.tolist()) != list(range(adj.shape[0])):
            raise ParameterError("order must be a permutation of the node ids")
        adj.setflags(write=False)
        order = order.copy()
        order.setflags(write=False)
        object.__setattr__(self, "adj", adj)
        object.__setattr__(self, "order", order)

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(self.adj))

    def edges(self):
        """Yield ``(src, dst, weight)`` in storage indices, sorted by (dst, src)."""
        dst, src = np.nonzero(self.adj)
        for i, j in zip(dst.tolist(), src.tolist()):
            yield j, i, float(self.adj[i, j])

    def labeled_adjacency(self) -> np.ndarray:
        """Adjacency indexed by the original node labels."""
        out = np.zeros_like(self.adj)
        out[np.ix_(self.order, self.order)] = self.adj
        return out

    def in_degrees(self) -> np.ndarray:
        return np.count_nonzero(self.adj, axis=1)

    def out_degrees(self) -> np.ndarray:
        return np.count_nonzero(self.adj, axis=0)

    def __eq__(self, other):
        if not isinstance(other, Dag):
            return NotImplemented
        return np.array_equal(self.adj, other.adj) and np.array_equal(self.order, other.order)

    __hash__ = None


def sample_er_dag(n: int, p: float, weights: WeightLaw | None = None, seed=None) -> Dag:
    """Sample an Erdos-Renyi DAG directly in lower-triangular form.

    Every pair ``j < i`` carries the edge ``j -> i`` independently with
    probability ``p``.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"edge probability must lie in [0, 1], got {p}")
    weights = WeightLaw() if weights is None else weights
    rng = np.random.default_rng(seed)
    rows, cols = np.tril_indices(n, k=-1)
    keep = rng.random(rows.size) < p
    adj = np.zeros((n, n))
    adj[rows[keep], cols[keep]] = weights.draw(rng, int(keep.sum()))
    return Dag(adj)


def topological_order(adj: np.ndarray) -> np.ndarray:
    """Kahn's algorithm; ties go to the smallest label.

    ``adj[i, j] != 0`` is the edge ``j -> i``.  Raises :class:`AcyclicityError`
    naming one edge that lies on a cycle.
    """
    adj = np.asarray(adj)
    n = adj.shape[0]
    nz = adj != 0
    indeg = nz.sum(axis=1)
    children = [np.flatnonzero(nz[:, j]).tolist() for j in range(n)]
    ready = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        j = heapq.heappop(ready)
        order.append(j)
        for i in children[j]:
            indeg[i] -= 1
            if indeg[i] == 0:
                heapq.heappush(ready, i)
    if len(order) < n:
        left = set(range(n)) - set(order)
        # walk parents inside the leftover set until a node repeats
        node = min(left)
        seen = {}
        while node not in seen:
            parent = next(j for j in np.flatnonzero(nz[node]).tolist() if j in left)
            seen[node] = parent
            node = parent
        src, dst = seen[node], node
        raise AcyclicityError(f"graph has a cycle through edge {src} -> {dst}", edge=(src, dst))
    return np.array(order, dtype=int)


def validate_dag(adj) -> Dag:
    """Sort an arbitrary adjacency matrix into topological storage order."""
    adj = np.asarray(adj, dtype=float)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
        raise ParameterError(f"adjacency must be a non-empty square matrix, got {adj.shape}")
    if not np.all(np.isfinite(adj)):
        raise ParameterError("adjacency has non-finite entries")
    if np.any(np.diag(adj) != 0):
        raise AcyclicityError("self-loop on the diagonal", edge=(int(np.flatnonzero(np.diag(adj))[0]),) * 2)
    order = topological_order(adj)
    return Dag(adj[np.ix_(order, order)], order)


def check_permutation(perm, n: int) -> np.ndarray:
    perm = np.asarray(perm)
    if perm.shape != (n,) or not np.issubdtype(perm.dtype, np.integer):
        raise ParameterError(f"permutation must be {n} integers")
    if not np.array_equal(np.sort(perm), np.arange(n)):
        raise ParameterError("permutation is not a bijection on the node set")
    return perm.astype(int)


def invert_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm, dtype=int)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


def permute(dag: Dag, perm) -> Dag:
    """Relabel nodes so that original label ``v`` becomes ``perm[v]``.

    The relabeled adjacency ``P A P^T`` is re-sorted into topological storage
    order; the returned ``order`` refers to the new labels.
    """
    perm = check_permutation(perm, dag.n)
    labeled = dag.labeled_adjacency()
    relabeled = np.zeros_like(labeled)
    relabeled[np.ix_(perm, perm)] = labeled
    return validate_dag(relabeled)


def save_dag(dag: Dag, path) -> None:
    """Write the edge list in storage indices: header ``n <N>`` then ``src dst weight``."""
    lines = [f"n {dag.n}"]
    lines += [f"{s} {d} {w!r}" for s, d, w in dag.edges()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_dag(path) -> Dag:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not rows or rows[0][0] != "n" or len(rows[0]) != 2:
        raise ParameterError(f"{path}: missing 'n <N>' header")
    n = int(rows[0][1])
    adj = np.zeros((n, n))
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise ParameterError(f"{path}:{lineno}: expected 'src dst weight'")
        src, dst, w = int(row[0]), int(row[1]), float(row[2])
        if not (0 <= src < n and 0 <= dst < n):
            raise ParameterError(f"{path}:{lineno}: node id out of range")
        adj[dst, src] = w
    return validate_dag(adj)
