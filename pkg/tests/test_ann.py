import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snnadv import ann
from snnadv.data import Dataset
from snnadv.errors import ConfigError, DimensionError, EmptyInputError, LabelError, TrainingDiverged

from conftest import blobs, random_cnn, random_mlp


def loop_forward(model, x):
    """Independent per-neuron evaluation of a dense/relu network."""
    h = list(x)
    for spec, p in zip(model.layers, model.params):
        if spec.kind == "dense":
            W = p["W"]
            b = p.get("b", np.zeros(len(W)))
            h = [sum(W[i, j] * h[j] for j in range(len(h))) + b[i] for i in range(len(W))]
        elif spec.kind == "relu":
            h = [max(v, 0.0) for v in h]
    return np.array(h)


def central_difference(f, x, h=1e-5):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def test_identity_dense_forward():
    model = ann.AnnModel((3,), (ann.dense(3),), [{"W": np.eye(3), "b": np.zeros(3)}])
    x = np.array([0.2, -1.0, 3.0])
    np.testing.assert_array_equal(ann.forward(model, x), x)


def test_dense_relu():
    model = ann.AnnModel((2,), (ann.dense(2), ann.relu()), [{"W": np.eye(2), "b": np.zeros(2)}, {}])
    np.testing.assert_array_equal(ann.forward(model, np.array([1.0, -1.0])), [1.0, 0.0])


def test_forward_matches_loop_oracle():
    model = random_mlp(4)
    x = np.random.default_rng(1).normal(size=4)
    np.testing.assert_allclose(ann.forward(model, x), loop_forward(model, x), rtol=1e-13, atol=1e-14)


def test_shape_errors():
    model = random_mlp(0)
    with pytest.raises(DimensionError):
        ann.forward(model, np.ones(5))
    with pytest.raises(DimensionError):
        ann.AnnModel.build((1, 5, 5), [ann.avgpool(2), ann.flatten(), ann.dense(2)])
    with pytest.raises(DimensionError):
        ann.AnnModel.build((4,), [ann.dense(3), ann.relu()])  # fine geometry, but ends 3-wide: allowed
        ann.AnnModel.build((1, 4, 4), [ann.conv2d(2, 3)])


def test_layer_spec_validation():
    with pytest.raises(ConfigError):
        ann.dropout(1.0)
    with pytest.raises(ConfigError):
        ann.conv2d(4, 2)
    with pytest.raises(ConfigError):
        ann.LayerSpec("maxpool")


def test_parse_vgg9():
    shape, layers = ann.parse_architecture(
        "3x32x32-64c5-64c5-2s-128c5-128c5-2s-256c5-256c5-256c5-2s-1024fc-10o", dropout_rate=0.2)
    assert shape == (3, 32, 32)
    kinds = [s.kind for s in layers]
    assert kinds.count("conv2d") == 7 and kinds.count("dense") == 2 and kinds.count("avgpool") == 3
    assert kinds.count("dropout") == 8
    # geometry only; VGG-9 weights would be ~17M parameters
    shp = shape
    for s in layers:
        shp = ann.output_shape(s, shp)
    assert shp == (10,)


def test_saturated_softmax_gives_zero_loss():
    model = ann.AnnModel((3,), (ann.dense(3),), [{"W": np.eye(3) * 100, "b": np.zeros(3)}])
    J, _, gx = ann.loss_and_grads(model, np.array([1.0, 0.0, 0.0]), 0)
    assert J < 1e-40
    assert np.abs(gx).max() < 1e-40


def test_two_class_linear_closed_form():
    W = np.array([[0.3, -0.7], [1.1, 0.4]])
    b = np.array([0.05, -0.2])
    model = ann.AnnModel((2,), (ann.dense(2),), [{"W": W, "b": b}])
    x = np.array([0.6, -0.25])
    z = W @ x + b
    # p1 = sigmoid(z1 - z0); dJ/dz = p - onehot(0)
    p1 = 1.0 / (1.0 + np.exp(-(z[1] - z[0])))
    dz = np.array([-p1, p1])
    J, grads, gx = ann.loss_and_grads(model, x, 0)
    assert J == pytest.approx(np.log1p(np.exp(z[1] - z[0])), abs=1e-12)
    np.testing.assert_allclose(gx, W.T @ dz, atol=1e-12)
    np.testing.assert_allclose(grads[0]["W"], np.outer(dz, x), atol=1e-12)
    np.testing.assert_allclose(grads[0]["b"], dz, atol=1e-12)


def check_gradients(model, x, y, tol=1e-4):
    _, grads, gx = ann.loss_and_grads(model, x, y)
    fd = central_difference(lambda: ann.loss_and_grads(model, x, y)[0], x)
    assert rel_err(gx, fd).max() <= tol
    for p, g in zip(model.params, grads):
        for k in p:
            fdp = central_difference(lambda: ann.loss_and_grads(model, x, y)[0], p[k])
            assert rel_err(g[k], fdp).max() <= tol, k


def test_input_gradient_three_layer_net():
    model = random_mlp(7, sizes=(5, 8, 6, 4))
    x = np.random.default_rng(2).normal(size=(3, 5))
    check_gradients(model, x, np.array([0, 3, 1]))


def test_conv_pool_gradients():
    model = random_cnn(1)
    x = np.random.default_rng(5).normal(size=(2, 1, 4, 4))
    check_gradients(model, x, np.array([2, 0]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_gradients_property(seed):
    model = random_mlp(seed)
    x = np.random.default_rng(seed).normal(size=(2, 4))
    check_gradients(model, x, np.array([seed % 3, (seed + 1) % 3]))


@settings(max_examples=50)
@given(st.lists(st.floats(-700, 700), min_size=1, max_size=12))
def test_softmax_sums_to_one(z):
    assert abs(ann.softmax(np.array(z)).sum() - 1.0) <= 1e-12


def test_invalid_label():
    model = random_mlp(0)
    with pytest.raises(LabelError):
        ann.loss_and_grads(model, np.zeros(4), 3)
    with pytest.raises(LabelError):
        ann.loss_and_grads(model, np.zeros(4), -1)


def test_dropout_train_vs_eval():
    layers = (ann.dense(50), ann.relu(), ann.dropout(0.5), ann.dense(2))
    model = ann.AnnModel.build((3,), layers, 0)
    x = np.ones((4, 3))
    np.testing.assert_array_equal(ann.forward(model, x), ann.forward(model, x))
    with pytest.raises(ConfigError):
        ann.forward(model, x, "train")
    from snnadv.tensor import SeededRng

    a = ann.forward(model, x, "train", SeededRng(1))
    assert not np.array_equal(a, ann.forward(model, x))
    np.testing.assert_array_equal(a, ann.forward(model, x, "train", SeededRng(1)))


def test_train_separable_toy():
    data = blobs(200, seed=3)
    model = ann.AnnModel.build((2,), (ann.dense(8), ann.relu(), ann.dense(2)), 0)
    cfg = ann.TrainConfig(epochs=50, learning_rate=0.1, batch_size=16, seed=0)
    trained = ann.train(model, data, cfg)
    assert ann.accuracy(trained, data) >= 0.99


def test_train_zero_epochs_and_zero_rate_are_identity():
    data = blobs(40)
    model = ann.AnnModel.build((2,), (ann.dense(4), ann.relu(), ann.dense(2)), 1)
    for cfg in (ann.TrainConfig(epochs=0), ann.TrainConfig(epochs=2, learning_rate=0.0)):
        out = ann.train(model, data, cfg)
        for p, q in zip(model.params, out.params):
            for k in p:
                assert np.array_equal(p[k], q[k])


def test_train_deterministic():
    data = blobs(60)
    model = ann.AnnModel.build((2,), (ann.dense(4), ann.relu(), ann.dropout(0.2), ann.dense(2)), 1)
    cfg = ann.TrainConfig(epochs=3, learning_rate=0.1, batch_size=8, seed=9)
    a, b = ann.train(model, data, cfg), ann.train(model, data, cfg)
    for p, q in zip(a.params, b.params):
        for k in p:
            assert np.array_equal(p[k], q[k])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_reports_epoch():
    data = blobs(40)
    data = Dataset(data.x * 1e200, data.y, 2)
    model = ann.AnnModel.build((2,), (ann.dense(2),), 1)
    with pytest.raises(TrainingDiverged) as err:
        ann.train(model, data, ann.TrainConfig(epochs=3, learning_rate=1e200))
    assert err.value.epoch in (1, 2, 3)


def test_anneal_schedule():
    cfg = ann.TrainConfig(epochs=200, learning_rate=0.09, anneal_epochs=(81, 122))
    assert cfg.rate_at(80) == 0.09
    assert cfg.rate_at(81) == pytest.approx(0.009)
    assert cfg.rate_at(122) == pytest.approx(0.0009)
    with pytest.raises(ConfigError):
        ann.TrainConfig(epochs=10, anneal_epochs=(5, 5))
    with pytest.raises(ConfigError):
        ann.TrainConfig(epochs=10, anneal_epochs=(10,))


def test_accuracy_cases():
    one = Dataset(np.array([[1.0, 0.0]]), np.array([0]), 2)
    model = ann.AnnModel((2,), (ann.dense(2),), [{"W": np.eye(2), "b": np.zeros(2)}])
    assert ann.accuracy(model, one) == 1.0
    with pytest.raises(EmptyInputError):
        ann.accuracy(model, Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2))


def test_constant_model_on_balanced_classes():
    y = np.repeat(np.arange(10), 30)
    data = Dataset(np.random.default_rng(0).normal(size=(300, 4)), y, 10)
    model = ann.AnnModel((4,), (ann.dense(10),), [{"W": np.zeros((10, 4)), "b": np.zeros(10)}])
    # all-tied logits resolve to class 0, correct for exactly a tenth of the data
    assert ann.accuracy(model, data) == pytest.approx(0.1)
    assert ann.accuracy(model, data) == ann.accuracy(model, data)
