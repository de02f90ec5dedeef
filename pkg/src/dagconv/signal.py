"""Signal processing on DAGs: closure, causal shifts, filters, Fourier transform.

Signals are arrays whose first axis indexes nodes, i.e. shape ``(N,)`` or
``(N, ...)``.  A signal ``x`` is modelled as ``x = W c`` where ``W = (I - A)^-1``
is the weighted transitive closure and ``c`` collects the causes, which are
also the spectral coefficients of ``x``.

The shift attached to node ``k`` is ``T_k = W D_k (I - A)`` where ``D_k`` keeps
the causes of the predecessors of ``k``.  Shifts are never materialised; every
application is two triangular products around a diagonal mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from .dag import Dag
from .errors import ParameterError, ShapeError

DENSE_THRESHOLD = 2000


def forward_substitution_inverse(lower: np.ndarray) -> np.ndarray:
    """Inverse of a unit-lower-triangular matrix ``I - A`` by forward substitution.

    Row ``i`` of ``W`` satisfies ``W[i] = e_i + A[i, :i] @ W[:i]``.
    """
    n = lower.shape[0]
    a = -np.tril(lower, k=-1)
    w = np.eye(n)
    for i in range(1, n):
        row = a[i, :i]
        nz = np.flatnonzero(row)
        if nz.size:
            w[i, :i] += row[nz] @ w[nz, :i]
    return w


class ClosurePair:
    """Weighted transitive closure ``W = (I - A)^-1`` held with its inverse ``I - A``.

    Below ``dense_threshold`` nodes both matrices are dense and ``W`` is built by
    forward substitution.  Above it ``I - A`` is kept sparse and products with
    ``W`` are triangular solves; ``.w`` then materialises on demand.
    """

    def __init__(self, winv, w=None, dense_threshold: int = DENSE_THRESHOLD):
        self.n = winv.shape[0]
        self.sparse = self.n > dense_threshold
        if self.sparse:
            self.winv = sp.csr_matrix(winv)
            self._winv_t = self.winv.T.tocsr()
            self._w = None
        else:
            self.winv = np.asarray(winv.toarray() if sp.issparse(winv) else winv, dtype=float)
            self._w = forward_substitution_inverse(self.winv) if w is None else np.asarray(w, dtype=float)
            self._w.setflags(write=False)
            self.winv.setflags(write=False)

    @property
    def w(self) -> np.ndarray:
        if self._w is None:
            self._w = self.synthesis(np.eye(self.n))
        return self._w

    def synthesis(self, c):
        """``W c``."""
        if not self.sparse:
            return _node_matmul(self._w, c)
        return _node_solve(self.winv, c, lower=True)

    def analysis(self, x):
        """``(I - A) x``."""
        if not self.sparse:
            return _node_matmul(self.winv, x)
        return _node_sparse(self.winv, x)

    def synthesis_t(self, x):
        """``W^T x``."""
        if not self.sparse:
            return _node_matmul(self._w.T, x)
        return _node_solve(self._winv_t, x, lower=False)

    def analysis_t(self, x):
        """``(I - A)^T x``."""
        if not self.sparse:
            return _node_matmul(self.winv.T, x)
        return _node_sparse(self._winv_t, x)


def _node_matmul(mat, x):
    x = np.asarray(x, dtype=float)
    if x.ndim <= 2:
        return mat @ x
    return (mat @ x.reshape(x.shape[0], -1)).reshape(x.shape)


def _node_sparse(mat, x):
    x = np.asarray(x, dtype=float)
    return np.asarray(mat @ x.reshape(x.shape[0], -1)).reshape(x.shape)


def _node_solve(mat, x, lower):
    x = np.asarray(x, dtype=float)
    flat = x.reshape(x.shape[0], -1)
    out = spsolve_triangular(mat, flat, lower=lower, unit_diagonal=True)
    return np.asarray(out).reshape(x.shape)


def transitive_closure(dag: Dag, dense_threshold: int = DENSE_THRESHOLD) -> ClosurePair:
    winv = np.eye(dag.n) - dag.adj
    return ClosurePair(winv, dense_threshold=dense_threshold)


def reachability(dag: Dag) -> np.ndarray:
    """Boolean ``R`` with ``R[i, j]`` true iff ``j <= i`` in the DAG partial order."""
    n = dag.n
    reach = np.eye(n, dtype=bool)
    for i in range(1, n):
        parents = np.flatnonzero(dag.adj[i, :i])
        if parents.size:
            reach[i] |= reach[parents].any(axis=0)
    return reach


@dataclass(frozen=True, eq=False)
class CausalShiftSet:
    """Selected shift nodes ``U`` and their predecessor indicators.

    ``masks[u]`` is the 0/1 diagonal of ``D_k`` for ``k = nodes[u]``.
    """

    nodes: np.ndarray
    masks: np.ndarray
    transposed: bool = False

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=int)
        masks = np.asarray(self.masks, dtype=bool)
        if masks.ndim != 2 or masks.shape[0] != nodes.size:
            raise ShapeError(f"need one mask per node, got {masks.shape} for {nodes.size} nodes")
        nodes.setflags(write=False)
        masks.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "masks", masks)

    @property
    def n(self) -> int:
        return self.masks.shape[1]

    def __len__(self):
        return self.nodes.size

    def index(self, k: int) -> int:
        hit = np.flatnonzero(self.nodes == k)
        if hit.size == 0:
            raise ParameterError(f"node {k} is not among the selected shifts")
        return int(hit[0])

    def with_direction(self, transposed: bool) -> "CausalShiftSet":
        return CausalShiftSet(self.nodes, self.masks, transposed)


def predecessor_masks(dag: Dag, nodes=None, transposed: bool = False, reach=None) -> CausalShiftSet:
    """Predecessor indicators ``d_k`` for every ``k`` in ``nodes`` (all nodes by default)."""
    nodes = np.arange(dag.n) if nodes is None else np.asarray(nodes, dtype=int).reshape(-1)
    if nodes.size == 0:
        raise ParameterError("the shift node set is empty")
    if nodes.min() < 0 or nodes.max() >= dag.n:
        raise ParameterError(f"shift node ids must lie in [0, {dag.n})")
    if reach is None:
        reach = reachability(dag)
    return CausalShiftSet(nodes, reach[nodes], transposed)


def random_shift_nodes(n: int, size: int | None, seed=None) -> np.ndarray:
    """``size`` distinct nodes drawn uniformly, returned sorted; ``None`` or ``size >= n`` means all."""
    if size is None or size >= n:
        return np.arange(n)
    if size < 1:
        raise ParameterError(f"need at least one shift, got {size}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=size, replace=False))


def _check_signal(closure: ClosurePair, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[0] != closure.n:
        raise ShapeError(f"signal has shape {x.shape}, expected {closure.n} nodes on axis 0")
    return x


def _diag_scale(d, x):
    return d.reshape((-1,) + (1,) * (x.ndim - 1)) * x


def _sandwich(closure, diag, x, transposed):
    x = _check_signal(closure, x)
    if transposed:
        return closure.analysis_t(_diag_scale(diag, closure.synthesis_t(x)))
    return closure.synthesis(_diag_scale(diag, closure.analysis(x)))


def apply_shift(closure: ClosurePair, shifts: CausalShiftSet, k: int, x) -> np.ndarray:
    """``T_k x = W (d_k * ((I - A) x))``, or ``T_k^T x`` for transposed shift sets."""
    if shifts.n != closure.n:
        raise ShapeError("shift set and closure disagree on the node count")
    d = shifts.masks[shifts.index(k)].astype(float)
    return _sandwich(closure, d, x, shifts.transposed)


@dataclass(frozen=True, eq=False)
class DagFilter:
    """``H = sum_k h_k T_k`` over the nodes of ``shifts``."""

    shifts: CausalShiftSet
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if coeffs.size != len(self.shifts):
            raise ShapeError(f"{coeffs.size} coefficients for {len(self.shifts)} shifts")
        object.__setattr__(self, "coeffs", coeffs)

    def to_text(self) -> str:
        return "".join(f"{k} {h!r}\n" for k, h in zip(self.shifts.nodes.tolist(), self.coeffs.tolist()))


def frequency_response(filt: DagFilter) -> np.ndarray:
    """Diagonal of ``sum_k h_k D_k``."""
    return filt.coeffs @ filt.shifts.masks.astype(float)


def apply_filter(filt: DagFilter, closure: ClosurePair, x) -> np.ndarray:
    """``H x`` in one pass: both triangular products around the aggregated response."""
    if filt.shifts.n != closure.n:
        raise ShapeError("filter and closure disagree on the node count")
    return _sandwich(closure, frequency_response(filt), x, filt.shifts.transposed)


def fourier(closure: ClosurePair, x) -> np.ndarray:
    """Causes ``c = (I - A) x``."""
    return closure.analysis(_check_signal(closure, x))


def inverse_fourier(closure: ClosurePair, c) -> np.ndarray:
    return closure.synthesis(_check_signal(closure, c))


def parse_filter(text: str, dag: Dag, transposed: bool = False) -> DagFilter:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    nodes = [int(r[0]) for r in rows]
    coeffs = [float(r[1]) for r in rows]
    return DagFilter(predecessor_masks(dag, nodes, transposed), np.array(coeffs))
