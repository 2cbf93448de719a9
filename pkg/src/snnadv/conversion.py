"""ANN -> SNN conversion by layer-wise threshold balancing, and the reverse map.

Each spiking layer's threshold is the largest input current it receives
from calibration spike trains, measured with all earlier layers already
balanced. :func:`build_transformed_ann` turns any SNN back into a ReLU
network whose activations approximate the SNN's firing rates; attacks use
it to obtain input gradients for spiking models.
"""
from __future__ import annotations

import math

import numpy as np

from . import ann
from .ann import AnnModel
from .errors import ConfigError, ConversionError, DegenerateCalibration, EmptyInputError
from .snn import BalanceReport, NeuronParams, SnnModel, encode_batch, simulate, ENCODE_CHUNK
from .tensor import SeededRng


def _strip_dropout(model: AnnModel):
    keep = [i for i, s in enumerate(model.layers) if s.kind != "dropout"]
    layers = tuple(model.layers[i] for i in keep)
    params = [model.params[i] for i in keep]
    return layers, params


def convert(ann_model: AnnModel, calib, T_cal: int = 200, rng: SeededRng | int = 0,
            T: int = 500, reset: str = "subtract"):
    """Threshold-balance ``ann_model`` into an IF network.

    ``calib`` is a dataset (only images are used). Calibration sample ``i``
    is encoded with ``rng.child(i)``, identically for every layer.
    Returns ``(SnnModel, BalanceReport)``.
    """
    if isinstance(rng, int):
        rng = SeededRng(rng)
    if len(calib) == 0:
        raise EmptyInputError("calibration set is empty")
    layers, params = _strip_dropout(ann_model)
    for spec, p in zip(layers, params):
        if spec.kind not in ann.KINDS:
            raise ConversionError(f"cannot convert layer kind {spec.kind!r}")
        if "b" in p and np.any(p["b"] != 0):
            raise ConversionError(f"{spec.kind} layer has non-zero biases; bias conversion is unsupported")
    params = [{"W": p["W"].copy()} if "W" in p else {} for p in params]
    n_spiking = sum(1 for s in layers if s.kind == "relu")
    try:
        SnnModel(ann_model.input_shape, layers, params, [NeuronParams.if_(1.0, reset)] * n_spiking, T_cal,
                 "converted")
    except ConfigError as err:
        raise ConversionError(str(err)) from err

    relu_at = [i for i, s in enumerate(layers) if s.kind == "relu"]
    thresholds = []
    x = calib.x
    for j, layer_index in enumerate(relu_at):
        neurons = [NeuronParams.if_(v, reset) for v in thresholds]
        neurons += [NeuronParams.if_(math.inf, reset)] * (n_spiking - j)
        probe_model = SnnModel(ann_model.input_shape, layers, params, neurons, T_cal, "converted")
        peak = -math.inf

        def probe(i, current):
            nonlocal peak
            if i == layer_index:
                peak = max(peak, float(current.max()))

        for s in range(0, len(x), ENCODE_CHUNK):
            simulate(probe_model, encode_batch(x[s:s + ENCODE_CHUNK], T_cal, rng, s), probe=probe)
        if not peak > 0:
            raise DegenerateCalibration(f"spiking layer {j} never receives positive current (max={peak})")
        thresholds.append(peak)

    report = BalanceReport(tuple(thresholds), T_cal, len(x))
    neurons = [NeuronParams.if_(v, reset) for v in thresholds]
    return SnnModel(ann_model.input_shape, layers, params, neurons, T, "converted", report), report


def layer_scales(snn: SnnModel):
    """Per-layer weight divisor: the threshold of the spiking layer a weight layer feeds."""
    scales = [1.0] * len(snn.layers)
    if snn.provenance != "converted":
        return scales
    j = 0
    pending = None
    for i, spec in enumerate(snn.layers):
        if spec.kind in ann.PARAMETRIC:
            pending = i
        elif spec.kind == "relu":
            if pending is not None:
                scales[pending] = snn.neurons[j].v_th
            pending = None
            j += 1
    return scales


def build_transformed_ann(snn: SnnModel) -> AnnModel:
    """ReLU network carrying the SNN's weights (divided by thresholds for converted models)."""
    params = []
    for p, scale in zip(snn.params, layer_scales(snn)):
        params.append({k: (v / scale if scale != 1.0 else v.copy()) for k, v in p.items()})
    return AnnModel(snn.input_shape, snn.layers, params)
