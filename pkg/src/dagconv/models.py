"""DCN and baseline architectures, plus the least-squares filter fit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dag import Dag
from .errors import ParameterError, ShapeError, SingularityError
from .nn import Layer, Network, Param, activate, activation_grad
from .signal import (
    CausalShiftSet,
    ClosurePair,
    DagFilter,
    apply_filter,
    apply_shift,
    predecessor_masks,
    random_shift_nodes,
)


def _uniform(rng, a, shape):
    return rng.uniform(-a, a, size=shape)


class DCNLayer(Layer):
    """``sigma(sum_{k in U} T_k X Theta_k)``.

    Since ``T_k = W D_k (I - A)`` and ``Theta_k`` acts on features only, the sum
    collapses to ``W Z`` with ``Z[i] = C[i] Phi[i]``, ``C = (I - A) X`` and the
    per-node weight ``Phi[i] = sum_k d_k[i] Theta_k``.  The transposed variant
    swaps in ``T_k^T = (I - A)^T D_k W^T``.
    """

    def __init__(self, closure: ClosurePair, shifts: CausalShiftSet, f_in, f_out, activation="relu",
                 rng=None, theta=None):
        self.closure = closure
        self.shifts = shifts
        self.f_in, self.f_out = f_in, f_out
        self.activation = activation
        self.masks = shifts.masks.astype(float)
        if theta is None:
            rng = np.random.default_rng(rng)
            theta = _uniform(rng, 1.0 / np.sqrt(len(shifts) * f_in), (len(shifts), f_in, f_out))
        self.theta = Param(theta)
        if self.theta.shape != (len(shifts), f_in, f_out):
            raise ShapeError(f"theta bank has shape {self.theta.shape}")
        self.params = [self.theta]

    @property
    def transposed(self):
        return self.shifts.transposed

    def _in(self, x):
        return self.closure.synthesis_t(x) if self.transposed else self.closure.analysis(x)

    def _out(self, z):
        return self.closure.analysis_t(z) if self.transposed else self.closure.synthesis(z)

    def _out_adjoint(self, g):
        return self.closure.analysis(g) if self.transposed else self.closure.synthesis_t(g)

    def _in_adjoint(self, g):
        return self.closure.synthesis(g) if self.transposed else self.closure.analysis_t(g)

    def node_weights(self):
        return np.einsum("un,uab->nab", self.masks, self.theta.values)

    def forward(self, x):
        if x.shape[0] != self.closure.n or x.shape[2] != self.f_in:
            raise ShapeError(f"DCN layer expects (N={self.closure.n}, M, {self.f_in}), got {x.shape}")
        self._c = self._in(x)
        self._phi = self.node_weights()
        self._z = self._out(np.matmul(self._c, self._phi))
        return activate(self._z, self.activation)

    def backward(self, g):
        g = activation_grad(g, self._z, self.activation)
        gz = self._out_adjoint(g)
        gphi = np.matmul(self._c.transpose(0, 2, 1), gz)
        self.theta.grad += np.einsum("un,nab->uab", self.masks, gphi)
        gc = np.matmul(gz, self._phi.transpose(0, 2, 1))
        return self._in_adjoint(gc)

    def config(self):
        return {"kind": "dcn", "f_in": self.f_in, "f_out": self.f_out, "activation": self.activation,
                "transposed": int(self.transposed), "nodes": self.shifts.nodes.tolist()}


class FBGCNNLayer(Layer):
    """``sigma(sum_{r<R} S^r X Theta_r)`` with powers applied one product at a time."""

    def __init__(self, shift: np.ndarray, order, f_in, f_out, activation="relu", rng=None, theta=None,
                 gso="adjacency", transposed=False):
        if order < 1:
            raise ParameterError(f"filter order must be >= 1, got {order}")
        self.shift = np.asarray(shift, dtype=float)
        self.order = order
        self.f_in, self.f_out = f_in, f_out
        self.activation = activation
        self.gso = gso
        self.transposed = transposed
        if theta is None:
            rng = np.random.default_rng(rng)
            theta = _uniform(rng, 1.0 / np.sqrt(order * f_in), (order, f_in, f_out))
        self.theta = Param(theta)
        if self.theta.shape != (order, f_in, f_out):
            raise ShapeError(f"theta bank has shape {self.theta.shape}")
        self.params = [self.theta]

    def _shift(self, mat, x):
        return (mat @ x.reshape(x.shape[0], -1)).reshape(x.shape)

    def forward(self, x):
        if x.shape[0] != self.shift.shape[0] or x.shape[2] != self.f_in:
            raise ShapeError(f"FB-GCNN layer expects (N, M, {self.f_in}), got {x.shape}")
        powers = [x]
        for _ in range(1, self.order):
            powers.append(self._shift(self.shift, powers[-1]))
        self._powers = powers
        self._z = sum(p @ th for p, th in zip(powers, self.theta.values))
        return activate(self._z, self.activation)

    def backward(self, g):
        g = activation_grad(g, self._z, self.activation)
        f_out = g.shape[2]
        g2 = g.reshape(-1, f_out)
        acc = None
        for r in reversed(range(self.order)):
            p = self._powers[r]
            self.theta.grad[r] += p.reshape(-1, p.shape[2]).T @ g2
            gp = g @ self.theta.values[r].T
            acc = gp if acc is None else gp + self._shift(self.shift.T, acc)
        return acc

    def config(self):
        return {"kind": "fbgcnn", "f_in": self.f_in, "f_out": self.f_out, "activation": self.activation,
                "order": self.order, "gso": self.gso, "transposed": int(self.transposed)}


class DenseLayer(Layer):
    """Fully connected map from all ``(node, feature)`` inputs to all outputs, with bias."""

    def __init__(self, n_in, f_in, n_out, f_out, activation="relu", rng=None, weight=None, bias=None):
        self.n_in, self.f_in, self.n_out, self.f_out = n_in, f_in, n_out, f_out
        self.activation = activation
        rng = np.random.default_rng(rng)
        fan_in = n_in * f_in
        if weight is None:
            weight = _uniform(rng, 1.0 / np.sqrt(fan_in), (fan_in, n_out * f_out))
        self.weight = Param(weight)
        self.bias = Param(np.zeros(n_out * f_out) if bias is None else bias)
        self.params = [self.weight, self.bias]

    def forward(self, x):
        if x.shape[0] != self.n_in or x.shape[2] != self.f_in:
            raise ShapeError(f"dense layer expects ({self.n_in}, M, {self.f_in}), got {x.shape}")
        m = x.shape[1]
        self._x = x.transpose(1, 0, 2).reshape(m, -1)
        self._z = self._x @ self.weight.values + self.bias.values
        out = activate(self._z, self.activation)
        return np.ascontiguousarray(out.reshape(m, self.n_out, self.f_out).transpose(1, 0, 2))

    def backward(self, g):
        m = g.shape[1]
        g = g.transpose(1, 0, 2).reshape(m, -1)
        g = activation_grad(g, self._z, self.activation)
        self.weight.grad += self._x.T @ g
        self.bias.grad += g.sum(axis=0)
        gx = g @ self.weight.values.T
        return np.ascontiguousarray(gx.reshape(m, self.n_in, self.f_in).transpose(1, 0, 2))

    def config(self):
        return {"kind": "dense", "n_in": self.n_in, "f_in": self.f_in, "n_out": self.n_out,
                "f_out": self.f_out, "activation": self.activation}


class NodeReadout(Layer):
    """Shared per-node linear scorer; logits are the scores of the candidate nodes."""

    def __init__(self, f_in, candidates, rng=None, weight=None, bias=None):
        candidates = np.asarray(candidates, dtype=int).reshape(-1)
        if candidates.size == 0:
            raise ParameterError("candidate set is empty")
        self.candidates = candidates
        self.f_in = f_in
        if weight is None:
            rng = np.random.default_rng(rng)
            weight = _uniform(rng, 1.0 / np.sqrt(f_in), (f_in,))
        self.weight = Param(weight)
        self.bias = Param(np.zeros(1) if bias is None else bias)
        self.params = [self.weight, self.bias]

    def forward(self, x):
        if x.shape[2] != self.f_in or self.candidates.max() >= x.shape[0]:
            raise ShapeError(f"readout expects {self.f_in} features over >{self.candidates.max()} nodes")
        self._shape = x.shape
        self._xc = x[self.candidates]
        return (self._xc @ self.weight.values).T + self.bias.values[0]

    def backward(self, g):
        gt = g.T  # (C, M)
        self.weight.grad += np.einsum("cmf,cm->f", self._xc, gt)
        self.bias.grad += g.sum()
        gx = np.zeros(self._shape)
        gx[self.candidates] = gt[:, :, None] * self.weight.values
        return gx

    def config(self):
        return {"kind": "readout", "f_in": self.f_in, "candidates": self.candidates.tolist()}


def dcn_layer(x, theta, shifts: CausalShiftSet, closure: ClosurePair, activation="identity"):
    """Functional DCN layer on sample-major input ``(M, N, F_in)``."""
    x = np.asarray(x, dtype=float)
    layer = DCNLayer(closure, shifts, x.shape[2], np.shape(theta)[2], activation, theta=np.array(theta))
    return layer.forward(np.ascontiguousarray(x.transpose(1, 0, 2))).transpose(1, 0, 2)


def dag_perceptron(x, h, shifts: CausalShiftSet, closure: ClosurePair, activation="identity"):
    """``sigma(sum_k h_k T_k x)`` for single-feature signals ``(N,)`` or ``(M, N)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None] if single else x
    out = dcn_layer(xb[:, :, None], np.asarray(h, dtype=float).reshape(-1, 1, 1), shifts, closure, activation)
    out = out[:, :, 0]
    return out[0] if single else out


def fb_gcnn_layer(x, theta, adj, activation="identity"):
    """Functional FB-GCNN layer on sample-major input ``(M, N, F_in)``."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    layer = FBGCNNLayer(adj, theta.shape[0], x.shape[2], theta.shape[2], activation, theta=theta)
    return layer.forward(np.ascontiguousarray(x.transpose(1, 0, 2))).transpose(1, 0, 2)


def source_readout(x, candidates, weight, bias=0.0):
    """Logits ``(M, C)`` from sample-major features ``(M, N, F)``."""
    x = np.asarray(x, dtype=float)
    head = NodeReadout(x.shape[2], candidates, weight=np.atleast_1d(weight), bias=np.atleast_1d(bias))
    return head.forward(np.ascontiguousarray(x.transpose(1, 0, 2)))


def gcn_shift(adj: np.ndarray) -> np.ndarray:
    """Row-normalised ``A + I`` on absolute weights."""
    s = np.abs(adj) + np.eye(adj.shape[0])
    return s / s.sum(axis=1, keepdims=True)


# -- builders -----------------------------------------------------------------

@dataclass
class ArchConfig:
    """Width/depth shared by the neural builders.

    ``layers`` counts graph layers; hidden ones use ReLU.  Regression models
    end with a one-feature identity layer; classification models end with a
    ReLU layer of width ``hidden`` followed by the node readout.
    """

    hidden: int = 16
    layers: int = 3
    order: int = 5


def _feature_sizes(f_in, arch: ArchConfig, classify: bool):
    sizes = [f_in] + [arch.hidden] * (arch.layers - 1)
    sizes.append(arch.hidden if classify else 1)
    return sizes


def _stack(make, f_in, arch, classify):
    sizes = _feature_sizes(f_in, arch, classify)
    out = []
    for i in range(arch.layers):
        last = i == arch.layers - 1
        act = "relu" if (classify or not last) else "identity"
        out.append(make(sizes[i], sizes[i + 1], act, i))
    return out


def build_dcn(dag: Dag, closure: ClosurePair, *, n_shifts=None, transposed=False, f_in=1,
              arch: ArchConfig | None = None, candidates=None, seed=None, shift_nodes=None,
              reach=None) -> Network:
    """DCN, DCN-|U| and their transposed variants.  One shift subset serves every layer."""
    arch = arch or ArchConfig()
    rng = np.random.default_rng(seed)
    if shift_nodes is None:
        shift_nodes = random_shift_nodes(dag.n, n_shifts, rng)
    shifts = predecessor_masks(dag, shift_nodes, transposed, reach=reach)
    classify = candidates is not None
    layers = _stack(lambda a, b, act, i: DCNLayer(closure, shifts, a, b, act, rng=rng), f_in, arch, classify)
    head = NodeReadout(arch.hidden, candidates, rng=rng) if classify else None
    name = "DCN" + (f"-{len(shifts)}" if len(shifts) < dag.n else "") + ("-T" if transposed else "")
    return Network(layers, head, name)


def build_fbgcnn(dag: Dag, *, order=None, gso="adjacency", transposed=False, f_in=1,
                 arch: ArchConfig | None = None, candidates=None, seed=None) -> Network:
    arch = arch or ArchConfig()
    order = arch.order if order is None else order
    rng = np.random.default_rng(seed)
    s = dag.adj if gso == "adjacency" else gcn_shift(dag.adj)
    if transposed:
        s = s.T
    classify = candidates is not None
    layers = _stack(lambda a, b, act, i: FBGCNNLayer(s, order, a, b, act, rng=rng, gso=gso,
                                                             transposed=transposed), f_in, arch, classify)
    head = NodeReadout(arch.hidden, candidates, rng=rng) if classify else None
    base = "GCN" if gso == "gcn" else f"FB-GCNN-{order}"
    return Network(layers, head, base + ("-T" if transposed else ""))


def build_gcn(dag: Dag, **kw) -> Network:
    kw.setdefault("order", 2)
    return build_fbgcnn(dag, gso="gcn", **kw)


def build_mlp(n: int, *, f_in=1, arch: ArchConfig | None = None, candidates=None, seed=None) -> Network:
    arch = arch or ArchConfig()
    rng = np.random.default_rng(seed)
    classify = candidates is not None
    layers = [DenseLayer(n, f_in, 1, arch.hidden, "relu", rng=rng)]
    for _ in range(arch.layers - 2):
        layers.append(DenseLayer(1, arch.hidden, 1, arch.hidden, "relu", rng=rng))
    if classify:
        layers.append(DenseLayer(1, arch.hidden, n, 1, "identity", rng=rng))
        head = NodeReadout(1, candidates, weight=np.ones(1))
    else:
        layers.append(DenseLayer(1, arch.hidden, n, 1, "identity", rng=rng))
        head = None
    return Network(layers, head, "MLP")


# -- least squares ------------------------------------------------------------

@dataclass
class LsFilterFit:
    support: np.ndarray
    h_hat: np.ndarray
    ridge: float
    transposed: bool = False

    def __post_init__(self):
        if self.h_hat.shape != self.support.shape:
            raise ShapeError("one coefficient per support node required")


def shift_regressors(closure: ClosurePair, shifts: CausalShiftSet, x):
    """Columns ``T_k x_m`` stacked as ``(M*N, |U|)``.

    The ``m``-th block of rows is ``W diag(c_m) D^T``, so every column comes out of
    a single product with ``W``.
    """
    x = np.asarray(x, dtype=float)
    masks = shifts.masks.astype(float)
    if shifts.transposed:
        cols = [apply_shift(closure, shifts, k, x.T).T for k in shifts.nodes]
        return np.stack(cols, axis=-1).reshape(-1, len(shifts))
    c = closure.analysis(x.T)  # (N, M)
    scaled = c.T[:, :, None] * masks.T[None]  # (M, N, U)
    out = closure.synthesis(scaled.transpose(1, 0, 2))  # (N, M, U)
    return out.transpose(1, 0, 2).reshape(-1, len(shifts))


def ls_fit(closure: ClosurePair, shifts: CausalShiftSet, x, y, ridge=0.0) -> LsFilterFit:
    """Least-squares (optionally ridge) estimate of ``h`` for ``y ~ sum_k h_k T_k x``.

    ``x`` and ``y`` are ``(M, N)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 2:
        raise ShapeError(f"inputs {x.shape} and outputs {y.shape} must both be (M, N)")
    if ridge < 0:
        raise ParameterError("ridge must be nonnegative")
    if x.shape[0] < len(shifts):
        raise ParameterError(f"need at least {len(shifts)} samples, got {x.shape[0]}")
    phi = shift_regressors(closure, shifts, x)
    gram = phi.T @ phi
    rhs = phi.T @ y.reshape(-1)
    if ridge == 0.0:
        rank = np.linalg.matrix_rank(gram)
        if rank < gram.shape[0]:
            raise SingularityError(f"normal matrix has rank {rank} < {gram.shape[0]}; use ridge > 0")
    h = np.linalg.solve(gram + ridge * np.eye(gram.shape[0]), rhs)
    return LsFilterFit(shifts.nodes.copy(), h, ridge, shifts.transposed)


def ls_predict(fit: LsFilterFit, shifts: CausalShiftSet, closure: ClosurePair, x):
    if not np.array_equal(shifts.nodes, fit.support):
        raise ParameterError("shift set does not match the fitted support")
    filt = DagFilter(shifts, fit.h_hat)
    return apply_filter(filt, closure, np.asarray(x, dtype=float).T).T
