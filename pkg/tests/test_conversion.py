import math

import numpy as np
import pytest

from snnadv import ann, snn
from snnadv.conversion import build_transformed_ann, convert, layer_scales
from snnadv.data import Dataset
from snnadv.errors import ConversionError, DegenerateCalibration, EmptyInputError
from snnadv.snn import NeuronParams, SnnModel
from snnadv.tensor import SeededRng

from conftest import blobs


def mlp(seed, sizes=(4, 8, 6, 2), dropout=0.0):
    layers = []
    for n in sizes[1:-1]:
        layers += [ann.dense(n, False), ann.relu()]
        if dropout:
            layers.append(ann.dropout(dropout))
    layers.append(ann.dense(sizes[-1], False))
    return ann.AnnModel.build((sizes[0],), layers, seed)


def test_thresholds_equal_peak_currents():
    model = mlp(0)
    calib = Dataset(np.random.default_rng(1).uniform(-1, 1, (7, 4)), np.zeros(7, int), 2)
    _, report = convert(model, calib, T_cal=25, rng=SeededRng(3))
    spikes = snn.encode_batch(calib.x, 25, SeededRng(3)).astype(float)
    W1, W2 = model.params[0]["W"], model.params[2]["W"]
    # layer 1: input currents are independent of any threshold
    assert report.thresholds[0] == np.max(spikes @ W1.T)
    # layer 2: simulate layer 1 with its balanced threshold, one scalar at a time
    v1 = np.zeros((7, 8))
    peak = -math.inf
    for t in range(25):
        v1 += spikes[t] @ W1.T
        fired = v1 >= report.thresholds[0]
        v1[fired] -= report.thresholds[0]
        peak = max(peak, float(np.max(fired.astype(float) @ W2.T)))
    assert report.thresholds[1] == peak
    assert report.T_cal == 25 and report.n_samples == 7


def test_converted_accuracy_tracks_ann():
    data = blobs(300, seed=2, dim=4, classes=3, spread=0.1)
    model = ann.train(mlp(1, (4, 16, 3)), data, ann.TrainConfig(epochs=40, learning_rate=0.1, batch_size=16))
    acc = ann.accuracy(model, data)
    converted, _ = convert(model, data.take(50), T_cal=100, T=300)
    assert converted.provenance == "converted"
    assert all(p.leak == "none" and p.reset == "subtract" for p in converted.neurons)
    assert snn.snn_accuracy(converted, data, 1) >= acc - 0.05


def test_biases_rejected():
    model = ann.AnnModel.build((4,), (ann.dense(3), ann.relu(), ann.dense(2, False)), 0)
    model.params[0]["b"][:] = 0.1
    with pytest.raises(ConversionError):
        convert(model, blobs(5, dim=4))


def test_zero_biases_accepted():
    model = ann.AnnModel.build((4,), (ann.dense(3), ann.relu(), ann.dense(2, False)), 0)
    converted, _ = convert(model, blobs(5, dim=4), T_cal=10)
    assert "b" not in converted.params[0]


def test_degenerate_calibration():
    model = mlp(0)
    model.params[0]["W"][:] = -1.0
    calib = Dataset(np.full((3, 4), 0.5), np.zeros(3, int), 2)
    with pytest.raises(DegenerateCalibration):
        convert(model, calib, T_cal=10)
    with pytest.raises(EmptyInputError):
        convert(mlp(0), calib.take(0))


def test_dropout_is_stripped():
    model = mlp(0, dropout=0.3)
    converted, report = convert(model, blobs(10, dim=4), T_cal=10)
    assert all(s.kind != "dropout" for s in converted.layers)
    keep = [i for i, spec in enumerate(model.layers) if spec.kind != "dropout"]
    same = ann.AnnModel(model.input_shape, [model.layers[i] for i in keep], [model.params[i] for i in keep])
    _, report2 = convert(same, blobs(10, dim=4), T_cal=10)
    assert report.thresholds == report2.thresholds


def test_transformed_ann_of_converted_model():
    model = mlp(2)
    converted, report = convert(model, blobs(20, dim=4), T_cal=20)
    t = build_transformed_ann(converted)
    np.testing.assert_array_equal(t.params[0]["W"], model.params[0]["W"] / report.thresholds[0])
    np.testing.assert_array_equal(t.params[2]["W"], model.params[2]["W"] / report.thresholds[1])
    np.testing.assert_array_equal(t.params[4]["W"], model.params[4]["W"])
    assert layer_scales(converted)[0] == report.thresholds[0]


def test_transformed_ann_rates_approximate_snn():
    # for a single IF layer the rate of a neuron is close to relu(W x / v_th)
    W = np.random.default_rng(0).uniform(0.0, 0.5, (5, 3))
    model = SnnModel((3,), (ann.dense(5, False), ann.relu(), ann.dense(5, False)),
                     [{"W": W}, {}, {"W": np.eye(5)}], [NeuronParams.if_(1.5)], 2000, "converted")
    x = np.array([[1.0, 1.0, 1.0]])
    rates = snn.snn_scores(model, x, 0)[0] / 2000
    np.testing.assert_allclose(rates, build_transformed_ann(model).logits(x)[0], atol=0.02)


def test_spike_trained_weights_used_verbatim():
    model = snn.spiking_model(mlp(3), NeuronParams.lif(2.0), 10)
    t = build_transformed_ann(model)
    for p, q in zip(model.params, t.params):
        for k in p:
            assert np.array_equal(p[k], q[k])
