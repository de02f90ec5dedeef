"""Hand-written backpropagation for a small, fixed set of layers.

Layers work on node-major tensors of shape ``(N, M, F)``: nodes, samples,
features.  Each layer caches what it needs in ``forward`` and, in
``backward``, accumulates into its parameters' ``grad`` and returns the
gradient with respect to its input.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ParameterError, ShapeError

log = logging.getLogger(__name__)


class Param:
    def __init__(self, values: np.ndarray):
        self.values = np.asarray(values, dtype=float)
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Param(shape={self.shape})"


ACTIVATIONS = ("relu", "identity")


def activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return z
    raise ParameterError(f"unknown activation {kind!r}")


def activation_grad(g, z, kind):
    if kind == "relu":
        return g * (z > 0)
    return g


class Layer:
    params: list = []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError

    def config(self) -> dict:
        """Constructor arguments that, together with the graph, rebuild the layer."""
        raise NotImplementedError


class Network:
    """A stack of layers with an optional classification head.

    ``forward`` takes sample-major inputs ``(M, N)`` or ``(M, N, F)``.  Without a
    head the last layer must produce one feature and the output is ``(M, N)``;
    with a head the output is ``(M, C)`` logits.
    """

    def __init__(self, layers, head=None, name="model"):
        self.layers = list(layers)
        self.head = head
        self.name = name

    @property
    def modules(self):
        return self.layers + ([self.head] if self.head is not None else [])

    @property
    def params(self):
        return [p for m in self.modules for p in m.params]

    def num_params(self) -> int:
        return sum(p.values.size for p in self.params)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.ndim != 3:
            raise ShapeError(f"expected (M, N) or (M, N, F) input, got {x.shape}")
        h = np.ascontiguousarray(x.transpose(1, 0, 2))
        for layer in self.layers:
            h = layer.forward(h)
        if self.head is not None:
            return self.head.forward(h)
        if h.shape[2] != 1:
            raise ShapeError(f"regression output needs one feature, got {h.shape[2]}")
        return h[:, :, 0].T

    def backward(self, g):
        if self.head is not None:
            g = self.head.backward(g)
        else:
            g = np.ascontiguousarray(g.T)[:, :, None]
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return np.ascontiguousarray(g.transpose(1, 0, 2))

    __call__ = forward

    def calibrate(self, x):
        """Rescale each layer's weights so its pre-activation has unit RMS on ``x``.

        Layers are linear in their weights and carry zero bias at init, so one
        division per layer suffices.  The head is left alone.
        """
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        h = np.ascontiguousarray(x.transpose(1, 0, 2))
        for layer in self.layers:
            layer.forward(h)
            rms = float(np.sqrt(np.mean(layer._z**2)))
            if rms > 0 and np.isfinite(rms):
                for p in layer.params:
                    p.values /= rms
            h = layer.forward(h)
        return self

    def state(self):
        return [p.values.copy() for p in self.params]

    def load_state(self, state):
        for p, v in zip(self.params, state):
            if p.values.shape != v.shape:
                raise ShapeError(f"state shape {v.shape} does not match parameter {p.values.shape}")
            p.values[...] = v

    def summary(self) -> str:
        lines = [f"{self.name}: {self.num_params()} parameters"]
        for i, m in enumerate(self.modules):
            cfg = {k: v for k, v in m.config().items() if k not in ("nodes", "candidates")}
            lines.append(f"  [{i}] " + " ".join(f"{k}={v}" for k, v in cfg.items()))
        return "\n".join(lines)


def mse_loss(pred, target):
    """Mean squared error over every entry, and its gradient."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy_loss(logits, labels):
    """Softmax cross-entropy averaged over samples, and its gradient."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} vs labels {labels.shape}")
    m = logits.shape[0]
    logp = log_softmax(logits)
    rows = np.arange(m)
    loss = -float(logp[rows, labels].mean())
    g = np.exp(logp)
    g[rows, labels] -= 1.0
    return loss, g / m


LOSSES = {"mse": mse_loss, "cross-entropy": cross_entropy_loss}


def forward_backward(model: Network, x, y, loss: str = "mse"):
    """Batch-mean loss; gradients are left in each parameter's ``grad``."""
    model.zero_grad()
    out = model.forward(x)
    value, g = LOSSES[loss](out, y)
    if not np.isfinite(value):
        return value
    model.backward(g)
    return value


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(params) -> AdamState:
    return AdamState([np.zeros_like(p.values) for p in params], [np.zeros_like(p.values) for p in params])


def adam_step(params, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam update using each parameter's ``grad``."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.values -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 60
    patience: int = 25
    loss: str = "mse"
    batch_size: int = 50  # 0 -> full batch
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ParameterError("need at least one epoch")
        if not 1 <= self.patience <= self.epochs:
            raise ParameterError(f"patience must lie in [1, epochs={self.epochs}], got {self.patience}")
        if self.loss not in LOSSES:
            raise ParameterError(f"unknown loss {self.loss!r}")
        if self.optimizer != "adam":
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    seconds: float = 0.0

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]


def train(model: Network, train_data, val_data, config: TrainConfig | None = None) -> History:
    """Fit ``model`` with Adam and keep the parameters of the best validation epoch.

    ``train_data`` and ``val_data`` are ``(inputs, targets)`` pairs.  Stops after
    ``config.patience`` epochs without a validation improvement.
    """
    config = config or TrainConfig()
    x_tr, y_tr = train_data
    x_va, y_va = val_data
    loss_fn = LOSSES[config.loss]
    rng = np.random.default_rng(config.seed)
    params = model.params
    state = adam_init(params)
    hist = History()
    best_state = model.state()
    best = np.inf
    m = len(x_tr)
    batch = m if config.batch_size <= 0 else config.batch_size
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = np.arange(m) if batch >= m else rng.permutation(m)
        total = 0.0
        for start in range(0, m, batch):
            idx = order[start : start + batch]
            value = forward_backward(model, x_tr[idx], y_tr[idx], config.loss)
            if not np.isfinite(value):
                raise DivergenceError(epoch, value)
            adam_step(params, state, config.lr)
            total += value * idx.size
        hist.train_loss.append(total / m)
        val, _ = loss_fn(model.forward(x_va), y_va)
        if not np.isfinite(val):
            raise DivergenceError(epoch, val)
        hist.val_loss.append(val)
        if val < best:
            best, hist.best_epoch = val, epoch
            best_state = model.state()
        elif epoch - hist.best_epoch >= config.patience:
            log.debug("early stop at epoch %d (best %d)", epoch, hist.best_epoch)
            break
    model.load_state(best_state)
    hist.seconds = time.perf_counter() - t0
    return hist


def clone(model: Network) -> Network:
    return copy.deepcopy(model)
