import zlib

import numpy as np
import pytest

from dagconv.dag import sample_er_dag
from dagconv.data import gen_diffusion
from dagconv.errors import DivergenceError, ParameterError, ShapeError
from dagconv.metrics import nmse
from dagconv.models import DCNLayer, DenseLayer, FBGCNNLayer, NodeReadout, gcn_shift
from dagconv.nn import (
    History,
    Network,
    TrainConfig,
    adam_init,
    adam_step,
    cross_entropy_loss,
    forward_backward,
    log_softmax,
    mse_loss,
    Param,
    train,
)
from dagconv.signal import predecessor_masks, transitive_closure

N, F = 8, 2
EPS = 1e-5
TOL = 1e-4


def numeric_vs_analytic(model, x, y, loss, seed, coords=25):
    """Worst relative error over ``coords`` random parameter coordinates."""
    forward_backward(model, x, y, loss)
    params = model.params
    analytic = [p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    sizes = np.array([p.values.size for p in params])
    worst = 0.0
    for _ in range(coords):
        i = rng.choice(len(params), p=sizes / sizes.sum())
        j = rng.integers(sizes[i])
        flat = params[i].values.reshape(-1)
        old = flat[j]
        flat[j] = old + EPS
        up = forward_backward(model, x, y, loss)
        flat[j] = old - EPS
        down = forward_backward(model, x, y, loss)
        flat[j] = old
        num = (up - down) / (2 * EPS)
        a = analytic[i].reshape(-1)[j]
        worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
    return worst


def _graph(seed=0):
    dag = sample_er_dag(N, 0.4, seed=seed)
    return dag, transitive_closure(dag)


def _dcn(transposed, act):
    dag, cl = _graph()
    rng = np.random.default_rng(1)
    s = predecessor_masks(dag, [1, 4, 6, 7], transposed)
    return [DCNLayer(cl, s, F, 3, act, rng=rng), DCNLayer(cl, s, 3, F, act, rng=rng)]


def _fb(gso, transposed, act):
    dag, _ = _graph()
    s = dag.adj if gso == "adjacency" else gcn_shift(dag.adj)
    s = s.T if transposed else s
    rng = np.random.default_rng(2)
    return [FBGCNNLayer(s, 3, F, 3, act, rng=rng), FBGCNNLayer(s, 2, 3, F, act, rng=rng)]


def _dense(act):
    rng = np.random.default_rng(3)
    return [DenseLayer(N, F, 1, 5, act, rng=rng), DenseLayer(1, 5, N, F, act, rng=rng)]


LAYER_STACKS = {
    "dcn": lambda act: _dcn(False, act),
    "dcn-t": lambda act: _dcn(True, act),
    "fbgcnn": lambda act: _fb("adjacency", False, act),
    "fbgcnn-t": lambda act: _fb("adjacency", True, act),
    "gcn": lambda act: _fb("gcn", False, act),
    "dense": _dense,
}


def _make(kind, loss, act):
    layers = LAYER_STACKS[kind](act)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, N, F))
    if loss == "mse":
        layers.append(DenseLayer(N, F, N, 1, "identity", rng=rng) if kind == "dense" else
                      type(layers[0])(*_tail(layers[0], F)))
        return Network(layers), x, rng.standard_normal((6, N))
    cand = [0, 2, 3, 5]
    head = NodeReadout(F, cand, rng=rng, bias=np.array([0.3]))
    return Network(layers, head), x, rng.integers(0, len(cand), size=6)


def _tail(layer, f_in):
    """Arguments for a one-feature identity layer of the same kind."""
    rng = np.random.default_rng(9)
    if isinstance(layer, DCNLayer):
        return layer.closure, layer.shifts, f_in, 1, "identity", rng
    return layer.shift, 2, f_in, 1, "identity", rng


@pytest.mark.parametrize("kind", sorted(LAYER_STACKS))
@pytest.mark.parametrize("loss", ["mse", "cross-entropy"])
@pytest.mark.parametrize("act", ["identity", "relu"])
def test_gradients_match_finite_differences(kind, loss, act):
    model, x, y = _make(kind, loss, act)
    assert numeric_vs_analytic(model, x, y, loss, seed=zlib.crc32(f"{kind}/{loss}/{act}".encode())) <= TOL


@pytest.mark.parametrize("kind", sorted(LAYER_STACKS))
def test_input_gradient(kind):
    model, x, y = _make(kind, "mse", "identity")
    forward_backward(model, x, y, "mse")
    out = model.forward(x)
    _, g = mse_loss(out, y)
    gx = model.backward(g)
    rng = np.random.default_rng(0)
    for _ in range(25):
        idx = tuple(rng.integers(s) for s in x.shape)
        xp, xm = x.copy(), x.copy()
        xp[idx] += EPS
        xm[idx] -= EPS
        num = (mse_loss(model.forward(xp), y)[0] - mse_loss(model.forward(xm), y)[0]) / (2 * EPS)
        assert abs(gx[idx] - num) <= TOL * max(abs(num), abs(gx[idx]), 1e-8)


def test_identity_model_has_zero_loss_and_gradient(rng):
    x = rng.standard_normal((4, 5))
    model = Network([])
    assert forward_backward(model, x, x, "mse") == 0.0
    assert model.params == []


def test_linear_map_gradient_by_hand(rng):
    layer = DenseLayer(4, 1, 4, 1, "identity", rng=rng)
    model = Network([layer])
    x = rng.standard_normal((1, 4))
    y = rng.standard_normal((1, 4))
    forward_backward(model, x, y, "mse")
    yhat = x @ layer.weight.values
    np.testing.assert_allclose(layer.weight.grad, np.outer(x[0], 2 * (yhat - y)[0] / y.size), rtol=1e-12)


def test_mse_value_and_gradient():
    v, g = mse_loss(np.array([[1.0, 2.0]]), np.array([[0.0, 4.0]]))
    assert v == pytest.approx(2.5)
    np.testing.assert_allclose(g, [[1.0, -2.0]])
    with pytest.raises(ShapeError):
        mse_loss(np.ones((2, 2)), np.ones((2, 3)))


def test_cross_entropy_by_hand():
    logits = np.array([[0.0, np.log(3.0)]])
    v, g = cross_entropy_loss(logits, np.array([1]))
    assert v == pytest.approx(-np.log(0.75))
    np.testing.assert_allclose(g, [[0.25, -0.25]])


def test_cross_entropy_is_overflow_safe():
    logits = np.array([[1e3, -1e3, 0.0], [-1e3, -1e3, 1e3]])
    v, g = cross_entropy_loss(logits, np.array([1, 2]))
    assert np.isfinite(v) and np.all(np.isfinite(g))
    assert np.all(np.isfinite(log_softmax(logits)))


def test_adam_zero_gradient_keeps_params():
    p = Param(np.array([1.0, -2.0]))
    state = adam_init([p])
    adam_step([p], state, lr=0.1)
    np.testing.assert_array_equal(p.values, [1.0, -2.0])


def test_adam_first_step_by_hand():
    # t=1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    p = Param(np.array([1.0, 1.0, 1.0]))
    g = np.array([0.5, -3.0, 1e-3])
    p.grad[...] = g
    adam_step([p], adam_init([p]), lr=0.01)
    np.testing.assert_allclose(p.values, 1.0 - 0.01 * g / (np.abs(g) + 1e-8), rtol=1e-14)


def test_adam_second_step_by_hand():
    p = Param(np.array([0.0]))
    state = adam_init([p])
    for g in (1.0, 3.0):
        p.grad[...] = g
        adam_step([p], state, lr=1.0)
    m = (0.1 * 0.9 * 1.0 + 0.1 * 3.0) / (1 - 0.9**2)
    v = (0.001 * 0.999 * 1.0 + 0.001 * 9.0) / (1 - 0.999**2)
    expected = -1.0 / (1 + 1e-8) - m / (np.sqrt(v) + 1e-8)
    assert p.values[0] == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("kw", [{"lr": 0}, {"epochs": 0}, {"patience": 200}, {"loss": "l1"},
                                {"optimizer": "sgd"}])
def test_train_config_validation(kw):
    with pytest.raises(ParameterError):
        TrainConfig(**kw)


def _linear_task(seed=0, noise=0.0, n=12):
    # inputs excite every node so each shift coefficient is identifiable
    dag = sample_er_dag(n, 0.3, seed=seed)
    return gen_diffusion(dag, m=400, n_src_nodes=n, noise_power=noise, seed=seed, n_shifts=4)


def _linear_model(task, shifts, theta=None):
    return Network([DCNLayer(task.closure, shifts, 1, 1, "identity", rng=0, theta=theta)])


def test_training_learns_identity():
    task = _linear_task()
    x = task.x_obs
    model = _linear_model(task, predecessor_masks(task.dag))
    s = task.splits
    train(model, (x[s.train], x[s.train]), (x[s.val], x[s.val]),
          TrainConfig(lr=0.02, epochs=200, patience=200, batch_size=50))
    assert nmse(model.forward(x[s.val]), x[s.val]) <= 1e-3


def test_training_recovers_true_filter():
    task = _linear_task(seed=1)
    s = task.splits
    model = _linear_model(task, task.filter.shifts)
    train(model, (task.x[s.train], task.y[s.train]), (task.x[s.val], task.y[s.val]),
          TrainConfig(lr=0.02, epochs=400, patience=400, batch_size=0))
    h_hat = model.params[0].values.reshape(-1)
    h = task.filter.coeffs
    assert np.linalg.norm(h_hat - h) / np.linalg.norm(h) <= 1e-2


def test_history_and_best_state_restored():
    task = _linear_task(seed=2, noise=0.2)
    s = task.splits
    model = _linear_model(task, predecessor_masks(task.dag))
    cfg = TrainConfig(lr=0.05, epochs=30, patience=5, batch_size=20, seed=3)
    hist = train(model, (task.x_obs[s.train], task.y_obs[s.train]), (task.x_obs[s.val], task.y_obs[s.val]), cfg)
    assert isinstance(hist, History)
    assert len(hist.val_loss) == len(hist.train_loss) <= cfg.epochs
    assert hist.best_val_loss == min(hist.val_loss) <= hist.val_loss[-1]
    val, _ = mse_loss(model.forward(task.x_obs[s.val]), task.y_obs[s.val])
    assert val == pytest.approx(hist.best_val_loss, rel=1e-12)


def test_training_is_deterministic():
    task = _linear_task(seed=4, noise=0.1)
    s = task.splits
    runs = []
    for _ in range(2):
        model = _linear_model(task, predecessor_masks(task.dag))
        train(model, (task.x_obs[s.train], task.y_obs[s.train]), (task.x_obs[s.val], task.y_obs[s.val]),
              TrainConfig(epochs=5, patience=5, seed=7))
        runs.append(model.params[0].values.copy())
    np.testing.assert_array_equal(runs[0], runs[1])


def test_divergence_is_reported():
    task = _linear_task()
    s = task.splits
    y = task.y.copy()
    y[s.train[0], 0] = np.inf
    model = _linear_model(task, predecessor_masks(task.dag))
    with pytest.raises(DivergenceError) as info:
        train(model, (task.x[s.train], y[s.train]), (task.x[s.val], y[s.val]), TrainConfig(epochs=3, patience=3))
    assert info.value.epoch == 0


def test_calibrate_gives_unit_rms(rng):
    dag, cl = _graph()
    model = Network([DCNLayer(cl, predecessor_masks(dag), 1, 4, "relu", rng=rng),
                     DCNLayer(cl, predecessor_masks(dag), 4, 1, "identity", rng=rng)])
    x = rng.standard_normal((50, N)) * 30
    model.calibrate(x)
    h = x.T[:, :, None]
    for layer in model.layers:
        h = layer.forward(h)
        assert np.sqrt(np.mean(layer._z**2)) == pytest.approx(1.0, rel=1e-12)


def test_state_round_trip(rng):
    model, x, _ = _make("dcn", "mse", "relu")
    state = model.state()
    before = model.forward(x)
    for p in model.params:
        p.values += 1.0
    model.load_state(state)
    np.testing.assert_array_equal(model.forward(x), before)
    with pytest.raises(ShapeError):
        model.load_state([np.zeros(1)] * len(state))


def test_network_rejects_bad_input():
    model, _, _ = _make("dcn", "mse", "relu")
    with pytest.raises(ShapeError):
        model.forward(np.ones(N))
