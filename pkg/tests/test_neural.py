import numpy as np
import pytest
from gradcheck import check_layer, check_network
from hypothesis import given, settings
from hypothesis import strategies as st

from utgpose.errors import DivergedError, ShapeError
from utgpose.neural import (LSTM, AdamState, Conv1D, Conv2D, Dense, Dropout, Flatten,
                            InstanceNorm, LayerSpec, MaxPool, Network, ReLU, Sigmoid, TrainConfig,
                            accuracy, adam_step, backward, bce_loss, lstm_step, sigmoid, train)

TOL = 1e-4


def run(layer, x, in_shape=None):
    net = Network([layer], in_shape or x.shape[1:], dtype=np.float64)
    return net.forward(x)


# --- forward examples ------------------------------------------------------

def conv1d_out(signal, kernel, bias=0.0):
    layer = Conv1D(len(kernel), 1)
    Network([layer], (len(signal), 1), dtype=np.float64)
    layer.params["W"][...] = np.asarray(kernel, float).reshape(-1, 1, 1)
    layer.params["b"][...] = bias
    return layer.forward(np.asarray(signal, float).reshape(1, -1, 1)).reshape(-1)


def test_conv1d_identity_kernel():
    assert conv1d_out([0, 0, 1, 0, 0], [0, 1, 0]).tolist() == [0, 1, 0]


def test_conv1d_hand_example():
    assert conv1d_out([1, 2, 3], [1, 1]).tolist() == [3, 5]


def test_conv1d_zero_kernel():
    assert not conv1d_out(np.arange(8), np.zeros(3)).any()


def conv2d_out(img, kernel):
    img = np.asarray(img, float)
    kernel = np.asarray(kernel, float)
    k = kernel.shape[0]
    layer = Conv2D(k, 1)
    Network([layer], img.shape + (1,), dtype=np.float64)
    layer.params["W"][...] = kernel.reshape(k, k, 1, 1)
    layer.params["b"][...] = 0
    return layer.forward(img[None, ..., None])[0, ..., 0]


def test_conv2d_corner_kernel():
    img = np.arange(9.0).reshape(3, 3)
    # picks the bottom-right element of every 2x2 window
    out = conv2d_out(img, [[0, 0], [0, 1]])
    assert out.tolist() == [[4, 5], [7, 8]]


def test_conv2d_zero_and_unit():
    img = np.random.default_rng(0).normal(size=(4, 5))
    assert not conv2d_out(img, np.zeros((2, 2))).any()
    assert np.array_equal(conv2d_out(img, [[1.0]]), img)


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        Network([Conv1D(5, 2)], (4, 1))
    net = Network([Conv1D(2, 2)], (6, 1))
    with pytest.raises(ShapeError):
        net.layers[0].forward(np.zeros((1, 7, 1)))


def test_instance_norm_examples():
    const = run(InstanceNorm(), np.full((1, 4, 1), 3.0))
    assert np.allclose(const, 0)
    out = run(InstanceNorm(eps=1e-12), np.array([[[1.0], [3.0]]]))
    assert np.allclose(out.reshape(-1), [-1, 1])
    layer = InstanceNorm()
    net = Network([layer], (5, 2), dtype=np.float64)
    layer.params["gamma"][...] = 0
    layer.params["beta"][...] = [0.25, -2]
    out = net.forward(np.random.default_rng(1).normal(size=(3, 5, 2)))
    assert np.allclose(out[..., 0], 0.25) and np.allclose(out[..., 1], -2)


def test_instance_norm_length_one_is_affine():
    layer = InstanceNorm()
    net = Network([layer], (1, 3), dtype=np.float64)
    layer.params["gamma"][...] = 2.0
    layer.params["beta"][...] = 0.5
    x = np.array([[[1.0, -1.0, 4.0]]])
    assert np.allclose(net.forward(x), 2 * x + 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_instance_norm_statistics(seed):
    x = np.random.default_rng(seed).normal(3, 5, size=(2, 20, 3))
    out = run(InstanceNorm(eps=1e-10), x)
    assert np.abs(out.mean(axis=1)).max() < 1e-6
    assert np.abs(out.var(axis=1) - 1).max() < 1e-3


def test_elementwise_examples():
    assert sigmoid(np.array(0.0)) == 0.5
    assert np.isfinite(sigmoid(np.array([-1000.0, 1000.0]))).all()
    assert run(ReLU(), np.array([[-1.0, 2.0]])).tolist() == [[0.0, 2.0]]
    assert run(Flatten(), np.ones((2, 3, 4))).shape == (2, 12)
    d = Dense(2)
    net = Network([d], (3,), dtype=np.float64)
    d.params["W"][...] = [[1, 0], [0, 1], [1, 1]]
    d.params["b"][...] = [0.5, -0.5]
    assert net.forward(np.array([[1.0, 2.0, 3.0]])).tolist() == [[4.5, 4.5]]


def test_maxpool_example():
    assert run(MaxPool(2), np.array([[[1.0], [5.0], [2.0], [3.0]]])).reshape(-1).tolist() == [5, 3]


def test_maxpool_floor_and_short_axis():
    net = Network([MaxPool(2)], (5, 1), dtype=np.float64)
    assert net.output_shape == (2, 1)
    net = Network([MaxPool(2)], (1, 4), dtype=np.float64)
    assert net.output_shape == (1, 4)
    net = Network([MaxPool((2, 1))], (5, 3, 2), dtype=np.float64)
    assert net.output_shape == (2, 3, 2)


def test_dropout_inference_identity():
    x = np.random.default_rng(0).normal(size=(4, 10))
    assert np.array_equal(run(Dropout(0.2), x), x)
    layer = Dropout(0.2)
    Network([layer], (10,))
    with pytest.raises(ValueError):
        layer.forward(x, training=True)


def test_dropout_expectation():
    layer = Dropout(0.2)
    Network([layer], (10_000,), dtype=np.float64)
    x = np.full((1, 10_000), 3.0)
    out = layer.forward(x, training=True, rng=np.random.default_rng(0))
    assert abs(out.mean() - 3.0) < 0.02 * 3.0
    assert set(np.unique(out)) <= {0.0, 3.0 / 0.8}


def test_lstm_step_examples():
    u, f = 4, 3
    zero = {"W_x": np.zeros((f, 4 * u)), "W_h": np.zeros((u, 4 * u)), "b": np.zeros(4 * u)}
    h, c = lstm_step(np.ones((1, f)), np.zeros((1, u)), np.zeros((1, u)), zero)
    assert not h.any() and not c.any()
    h, c = lstm_step(np.ones((1, f)), np.zeros((1, u)), np.ones((1, u)), zero)
    assert np.allclose(c, 0.5) and np.allclose(h, 0.5 * np.tanh(0.5))


def test_lstm_sequence_matches_repeated_step():
    rng = np.random.default_rng(3)
    layer = LSTM(5)
    net = Network([layer], (18, 4), seed=2, dtype=np.float64)
    x_t = rng.normal(size=(1, 4))
    seq = np.repeat(x_t[:, None, :], 18, axis=1)
    h = c = np.zeros((1, 5))
    for _ in range(18):
        h, c = lstm_step(x_t, h, c, layer.params)
    assert np.allclose(net.forward(seq), h)


def test_lstm_forget_bias():
    layer = LSTM(3)
    Network([layer], (2, 2))
    b = layer.params["b"]
    assert (b[3:6] == 1).all() and (b[:3] == 0).all() and (b[6:] == 0).all()


def test_bce_examples():
    eps = 1e-7
    assert bce_loss(1 - eps, 1) == pytest.approx(0, abs=1e-6)
    assert bce_loss(0.5, 0) == pytest.approx(np.log(2))
    assert bce_loss(0.5, 1) == pytest.approx(np.log(2))
    assert np.isfinite(bce_loss(0.0, 1))


def test_adam_examples():
    p = np.array([1.0, -2.0, 3.0])
    g = np.array([0.3, -5.0, 1e-3])
    new, st_ = adam_step(p, g, AdamState.zeros_like(p), lr=1e-3)
    assert np.allclose(new - p, -1e-3 * np.sign(g), rtol=1e-4)
    assert st_.step == 1
    same, _ = adam_step(p, np.zeros(3), AdamState.zeros_like(p))
    assert np.array_equal(same, p)
    p1, s1 = adam_step(p, g, AdamState.zeros_like(p))
    p2, _ = adam_step(p1, g, s1)
    assert (np.abs(p2 - p1) <= np.abs(p1 - p) + 1e-12).all()
    # pure: inputs untouched
    assert p.tolist() == [1.0, -2.0, 3.0]


def test_layerspec_validation():
    with pytest.raises(ValueError):
        LayerSpec("Conv1D", n_filters=3)
    with pytest.raises(ValueError):
        LayerSpec("Conv1D", kernel_size=0, n_filters=3)
    with pytest.raises(ValueError):
        LayerSpec("Dropout", rate=1.0)
    with pytest.raises(ValueError):
        LayerSpec("Pooling")
    spec = LayerSpec("MaxPool", kernel_size=2, pool=(2, 1))
    assert LayerSpec.from_dict(spec.to_dict()) == spec


# --- gradient checks -------------------------------------------------------

@pytest.mark.parametrize("name,layer,shape,kwargs", [
    ("Conv1D", lambda: Conv1D(3, 4), (9, 2), {}),
    ("Conv2D", lambda: Conv2D(2, 3), (5, 4, 2), {}),
    ("InstanceNorm", lambda: InstanceNorm(), (7, 3), {}),
    ("InstanceNorm2D", lambda: InstanceNorm(), (4, 3, 2), {}),
    ("InstanceNormLen1", lambda: InstanceNorm(), (1, 3), {}),
    ("ReLU", lambda: ReLU(), (6, 2), {}),
    ("Sigmoid", lambda: Sigmoid(), (5,), {}),
    ("Dropout", lambda: Dropout(0.3), (12,), {"training": True}),
    ("MaxPool1D", lambda: MaxPool(2), (9, 3), {}),
    ("MaxPool2D", lambda: MaxPool((2, 1)), (5, 3, 2), {}),
    ("Flatten", lambda: Flatten(), (3, 2, 2), {}),
    ("Dense", lambda: Dense(4), (6,), {}),
    ("LSTM", lambda: LSTM(5), (4, 3), {}),
])
def test_gradient_check(name, layer, shape, kwargs):
    x = None
    if name == "ReLU":
        # keep probes away from the kink
        x = np.random.default_rng(0).uniform(0.1, 1, (2,) + shape) * np.random.default_rng(1).choice(
            [-1, 1], (2,) + shape)
    assert check_layer(layer(), shape, x=x, **kwargs) < TOL


def test_gradient_check_full_bce_path():
    rng = np.random.default_rng(0)
    net = Network([Conv1D(3, 4), InstanceNorm(), ReLU(), MaxPool(2), Flatten(), Dense(1), Sigmoid()],
                  (12, 1), seed=1, dtype=np.float64)
    x = rng.normal(size=(4, 12, 1))
    y = np.array([0, 1, 1, 0])
    assert check_network(net, x, y) < TOL


def test_dense_sigmoid_analytic_gradient():
    d = Dense(1)
    net = Network([d, Sigmoid()], (3,), dtype=np.float64)
    x = np.array([[0.5, -1.0, 2.0]])
    grads = backward(net, x, np.array([1.0]))
    p = net.forward(x).item()
    assert np.allclose(grads["0.Dense.W"].reshape(-1), (p - 1) * x.reshape(-1))
    assert np.allclose(grads["0.Dense.b"], p - 1)


def test_zero_input_zero_first_layer_weight_grads():
    net = Network([Dense(4), ReLU(), Dense(1), Sigmoid()], (5,), dtype=np.float64)
    grads = backward(net, np.zeros((3, 5)), np.array([1, 0, 1]))
    assert not grads["0.Dense.W"].any()


# --- training --------------------------------------------------------------

def toy_separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    x += np.where(y[:, None] == 1, 0.3, -0.3)
    return x, y


def logistic_net(seed=0):
    return Network([Dense(1), Sigmoid()], (2,), seed=seed, dtype=np.float64)


def test_train_separable():
    x, y = toy_separable()
    net = logistic_net()
    train(net, x, y, TrainConfig(lr=0.05, batch_size=20, max_epochs=20))
    assert accuracy(net, x, y) == 1.0


def test_train_constant_labels():
    x, _ = toy_separable(100)
    net = logistic_net()
    train(net, x, np.ones(100), TrainConfig(lr=0.05, batch_size=10, max_epochs=20))
    assert net.predict(x).mean() > 0.95


def test_train_deterministic():
    x, y = toy_separable()
    curves, weights = [], []
    for _ in range(2):
        net = Network([Dense(4), ReLU(), Dropout(0.2), Dense(1), Sigmoid()], (2,), seed=3)
        curves.append(train(net, x, y, TrainConfig(max_epochs=3, batch_size=32, seed=9)).loss_curve)
        weights.append(b"".join(p.tobytes() for _, p in net.named_params()))
    assert curves[0] == curves[1]
    assert weights[0] == weights[1]


def test_train_stop_loss_and_validation():
    x, y = toy_separable()
    net = logistic_net()
    res = train(net, x, y, TrainConfig(lr=0.1, max_epochs=50, stop_loss=0.3))
    assert len(res.loss_curve) < 50 and res.loss_curve[-1] < 0.3
    with pytest.raises(ValueError):
        train(net, x[:0], y[:0])
    with pytest.raises(ValueError):
        train(net, x, y + 2)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_train_diverged():
    x, y = toy_separable()
    net = logistic_net()
    net.layers[0].params["W"][...] = np.nan
    with pytest.raises(DivergedError):
        train(net, x, y, TrainConfig(max_epochs=1))


def test_save_load_roundtrip(tmp_path):
    net = Network([Conv1D(3, 4), InstanceNorm(), ReLU(), MaxPool(2), Flatten(), Dense(1), Sigmoid()],
                  (12, 1), seed=5, dtype=np.float32)
    json_path, bin_path = net.save(tmp_path / "m", {"note": "x"})
    assert bin_path.stat().st_size == 4 * net.n_params
    back, meta = Network.load(tmp_path / "m")
    assert meta == {"note": "x"}
    x = np.random.default_rng(0).normal(size=(3, 12, 1))
    assert np.array_equal(back.forward(x), net.forward(x))
    bin_path.write_bytes(bin_path.read_bytes()[:-4])
    with pytest.raises(ValueError):
        Network.load(tmp_path / "m")


def test_loss_curve_csv():
    import io

    x, y = toy_separable(40)
    res = train(logistic_net(), x, y, TrainConfig(max_epochs=2))
    buf = io.StringIO()
    res.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "epoch,mean_loss" and len(lines) == 3
