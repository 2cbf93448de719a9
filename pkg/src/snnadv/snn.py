"""Spiking networks: rate coding, IF/LIF dynamics, traces and spike-based training.

Time is discrete with a unit step. A membrane integrates ``v <- lam * v + I``
with ``lam = exp(-1 / tau)`` (``lam = 1`` for IF neurons), fires where
``v >= v_th`` and is then reset, in that order. The last parametric layer
is a non-leaking, non-firing accumulator whose summed potential is the
class score.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import ann
from .ann import LayerSpec, TrainConfig, SGD, layer_forward, layer_backward, cross_entropy
from .errors import ConfigError, DimensionError, EncodingRangeError, EmptyInputError, TrainingDiverged
from .tensor import SeededRng

log = logging.getLogger(__name__)

LEAK_MODES = ("none", "exponential")
RESET_MODES = ("zero", "subtract")
ENCODE_CHUNK = 100


@dataclass(frozen=True)
class NeuronParams:
    v_th: float = 1.0
    tau: float = math.inf
    leak: str = "none"
    reset: str = "subtract"

    def __post_init__(self):
        if not self.v_th > 0:
            raise ConfigError("v_th must be positive")
        if self.leak not in LEAK_MODES or self.reset not in RESET_MODES:
            raise ConfigError(f"bad neuron modes leak={self.leak!r} reset={self.reset!r}")
        if self.leak == "exponential" and not self.tau > 0:
            raise ConfigError("tau must be positive for leaky neurons")

    @property
    def decay(self) -> float:
        return math.exp(-1.0 / self.tau) if self.leak == "exponential" else 1.0

    @classmethod
    def lif(cls, v_th=1.0, tau=100.0, reset="zero"):
        return cls(v_th, tau, "exponential", reset)

    @classmethod
    def if_(cls, v_th=1.0, reset="subtract"):
        return cls(v_th, math.inf, "none", reset)


@dataclass
class SpikeTrain:
    """Signed events of shape ``(T, *input_shape)`` with values in {-1, 0, +1}."""

    events: np.ndarray
    rng: SeededRng | None = None

    @property
    def T(self) -> int:
        return self.events.shape[0]


@dataclass
class NeuronState:
    v: np.ndarray


@dataclass
class ActivationTrace:
    a: np.ndarray  # a[t - 1] holds a(t), t = 1..steps
    tau: float
    T: int


# -- encoding ---------------------------------------------------------------

def _check_range(x):
    if np.any(np.abs(x) > 1.0):
        raise EncodingRangeError(f"|x| must be <= 1 for rate coding, max is {np.abs(x).max()}")


def _encode(x, T, rng: SeededRng, dtype=np.float64):
    u = rng.generator().random((T,) + x.shape)
    return (np.sign(x) * (u < np.abs(x))).astype(dtype)


def poisson_encode(x, T: int, rng: SeededRng) -> SpikeTrain:
    """Each step, every pixel fires with probability ``|x|``; the spike carries ``sign(x)``."""
    x = np.asarray(x, dtype=np.float64)
    _check_range(x)
    if T < 1:
        raise ConfigError("T must be >= 1")
    return SpikeTrain(_encode(x, T, rng), rng)


def encode_batch(x, T: int, rng: SeededRng, start: int = 0):
    """Encode samples ``x[i]`` with streams ``rng.child(start + i)``; returns int8 ``(T, N, ...)``."""
    x = np.asarray(x, dtype=np.float64)
    _check_range(x)
    out = np.empty((T,) + x.shape, dtype=np.int8)
    for i in range(len(x)):
        out[:, i] = _encode(x[i], T, rng.child(start + i), np.int8)
    return out


def rate_decode(train) -> np.ndarray:
    events = train.events if isinstance(train, SpikeTrain) else np.asarray(train)
    return events.mean(axis=0, dtype=np.float64)


def rate_batch(x, T: int, rng: SeededRng, start: int = 0):
    """``rate_decode(poisson_encode(x[i], T, rng.child(start + i)))`` for every sample."""
    out = np.empty(np.shape(x))
    for s in range(0, len(x), ENCODE_CHUNK):
        spikes = encode_batch(x[s:s + ENCODE_CHUNK], T, rng, start + s)
        out[s:s + ENCODE_CHUNK] = spikes.sum(axis=0, dtype=np.float64) / T
    return out


# -- neuron dynamics --------------------------------------------------------

def _step(v, current, lam, p: NeuronParams):
    if lam != 1.0:
        v *= lam
    v += current
    fired = v >= p.v_th
    if p.reset == "zero":
        v *= ~fired
    else:
        np.subtract(v, p.v_th, out=v, where=fired)
    return fired


def neuron_step(state: NeuronState, current, p: NeuronParams):
    """Integrate, compare, reset. Returns ``(new_state, spikes)``; the input state is untouched."""
    v = np.array(state.v, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64)
    if v.shape != current.shape:
        raise DimensionError(f"state {v.shape} and current {current.shape} differ")
    fired = _step(v, current, p.decay, p)
    return NeuronState(v), fired.astype(np.float64)


def activation_trace(spikes, tau: float, T: int) -> ActivationTrace:
    """Low-pass filtered spike train ``a(t) = (1/T) * sum_{t_k <= t} exp(-(t - t_k) / tau)``.

    ``spikes`` has shape ``(steps, *neurons)`` with ``spikes[t - 1]`` the
    spike indicator at time ``t``. Evaluated with the recurrence
    ``a(t) = a(t-1) * exp(-1/tau) + s(t) / T``.
    """
    s = np.asarray(spikes, dtype=np.float64)
    lam = math.exp(-1.0 / tau)
    a = np.empty_like(s)
    prev = np.zeros(s.shape[1:])
    for t in range(len(s)):
        prev = prev * lam + s[t] / T
        a[t] = prev
    return ActivationTrace(a, tau, T)


def surrogate_grad(trace: ActivationTrace, p: NeuronParams, t: int):
    """``max(0, (1 + Δa) / v_th)`` with ``Δa = a(t) - a(t-1)`` and ``a(0) = 0``."""
    if t < 1:
        raise ConfigError("t must be >= 1")
    now = trace.a[t - 1]
    before = trace.a[t - 2] if t >= 2 else np.zeros_like(now)
    return np.maximum((1.0 + (now - before)) / p.v_th, 0.0)


# -- models -----------------------------------------------------------------

@dataclass(frozen=True)
class BalanceReport:
    thresholds: tuple
    T_cal: int
    n_samples: int

    def __post_init__(self):
        if any(not v > 0 for v in self.thresholds):
            raise ConfigError("balanced thresholds must be positive")


@dataclass
class SnnModel:
    input_shape: tuple
    layers: tuple
    params: list = field(repr=False)
    neurons: list
    T: int
    provenance: str = "spike-trained"
    balance: BalanceReport | None = None

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.layers = tuple(replace(s, bias=False) if s.kind in ann.PARAMETRIC else s for s in self.layers)
        self.neurons = list(self.neurons)
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.provenance not in ("converted", "spike-trained"):
            raise ConfigError(f"unknown provenance {self.provenance!r}")
        # geometry check via the ANN validator
        self.shapes = ann.AnnModel(self.input_shape, self.layers, self.params).shapes
        kinds = [s.kind for s in self.layers]
        if kinds.count("relu") != len(self.neurons):
            raise ConfigError("one NeuronParams per spiking layer is required")
        param_idx = [i for i, k in enumerate(kinds) if k in ann.PARAMETRIC]
        if not param_idx or param_idx[-1] != max(i for i, k in enumerate(kinds) if k not in ("flatten", "dropout")):
            raise ConfigError("the last layer must be the dense/conv output accumulator")
        for i in param_idx[:-1]:
            j = i + 1
            while j < len(kinds) and kinds[j] == "dropout":
                j += 1
            if j >= len(kinds) or kinds[j] != "relu":
                raise ConfigError(f"hidden {kinds[i]} layer {i} must be followed by a spiking layer")

    @property
    def n_classes(self) -> int:
        return self.shapes[-1][0]

    def copy(self) -> "SnnModel":
        return replace(self, params=[{k: v.copy() for k, v in p.items()} for p in self.params],
                       neurons=list(self.neurons))


def spiking_model(ann_model: ann.AnnModel, neuron: NeuronParams, T: int) -> SnnModel:
    """An SNN sharing ``ann_model``'s topology and weights (biases dropped)."""
    params = [{"W": p["W"].copy()} if "W" in p else {} for p in ann_model.params]
    n_spiking = sum(1 for s in ann_model.layers if s.kind == "relu")
    return SnnModel(ann_model.input_shape, ann_model.layers, params, [neuron] * n_spiking, T)


def _readout_start(model):
    kinds = [s.kind for s in model.layers]
    return max((i for i, k in enumerate(kinds) if k == "relu"), default=-1) + 1


def simulate(model: SnnModel, spikes, masks=None, record=False, probe=None):
    """Run a batch of spike trains ``(T, N, *input_shape)`` through ``model``.

    Returns the accumulated output scores ``(N, classes)``. With ``record``
    also returns per-spiking-layer traces ``a(T)``, ``a(T-1)`` and the input
    trace. ``probe(layer_index, current)`` observes every pre-activation
    current handed to a spiking layer.
    """
    T = spikes.shape[0]
    n = spikes.shape[1]
    if spikes.shape[2:] != model.input_shape:
        raise DimensionError(f"spike shape {spikes.shape[2:]} does not match {model.input_shape}")
    stop = _readout_start(model)
    v, lam, traces, prev = {}, {}, {}, {}
    neuron_of = {}
    j = 0
    for i, spec in enumerate(model.layers):
        if spec.kind == "relu":
            neuron_of[i] = model.neurons[j]
            lam[i] = model.neurons[j].decay
            v[i] = np.zeros((n,) + model.shapes[i])
            j += 1
    first = model.neurons[0] if model.neurons else NeuronParams.if_()
    in_lam = math.exp(-1.0 / first.tau) if record else 1.0
    if record:
        for i in v:
            traces[i] = np.zeros_like(v[i])
        in_trace = np.zeros((n,) + model.input_shape)
    counts = np.zeros((n,) + model.shapes[stop])
    for t in range(T):
        h = spikes[t].astype(np.float64)
        if record:
            if t == T - 1:
                in_prev = in_trace.copy()
            in_trace *= in_lam
            in_trace += h / T
        for i in range(stop):
            spec = model.layers[i]
            if spec.kind == "relu":
                if probe is not None:
                    probe(i, h)
                fired = _step(v[i], h, lam[i], neuron_of[i])
                h = fired.astype(np.float64)
                if record:
                    if t == T - 1:
                        prev[i] = traces[i].copy()
                    traces[i] *= math.exp(-1.0 / neuron_of[i].tau)
                    traces[i] += h / T
            elif spec.kind == "dropout":
                if masks is not None and i in masks:
                    h = h * masks[i]
            else:
                h, _ = layer_forward(spec, model.params[i], h)
        counts += h
    scores = counts
    for i in range(stop, len(model.layers)):
        spec = model.layers[i]
        if spec.kind != "dropout":
            scores, _ = layer_forward(spec, model.params[i], scores)
    if record:
        return scores, {"trace": traces, "prev": prev, "input": in_trace, "input_prev": in_prev}
    return scores


def snn_forward(model: SnnModel, train: SpikeTrain):
    """Accumulated output potentials for one spike train."""
    if train.T != model.T:
        raise ConfigError(f"spike train horizon {train.T} != model horizon {model.T}")
    if train.events.shape[1:] != model.input_shape:
        raise DimensionError(f"spike shape {train.events.shape[1:]} does not match {model.input_shape}")
    return simulate(model, train.events[:, None])[0]


def snn_scores(model: SnnModel, x, rng: SeededRng | int, T: int | None = None, start: int = 0):
    """Poisson-encode each ``x[i]`` with stream ``rng.child(start + i)`` and simulate."""
    T = T or model.T
    if not isinstance(rng, SeededRng):
        rng = SeededRng(rng)
    out = np.empty((len(x), model.n_classes))
    for s in range(0, len(x), ENCODE_CHUNK):
        spikes = encode_batch(x[s:s + ENCODE_CHUNK], T, rng, start + s)
        out[s:s + ENCODE_CHUNK] = simulate(model, spikes)
    return out


def snn_accuracy(model: SnnModel, dataset, rng: SeededRng | int = 0, T: int | None = None) -> float:
    if len(dataset) == 0:
        raise EmptyInputError("accuracy of an empty dataset is undefined")
    pred = np.argmax(snn_scores(model, dataset.x, rng, T), axis=1)
    return float(np.mean(pred == dataset.y))


# -- spike-based training ---------------------------------------------------

def _dropout_masks(model, n, rng: SeededRng):
    masks = {}
    for i, spec in enumerate(model.layers):
        if spec.kind == "dropout" and spec.rate > 0:
            masks[i] = ann.dropout_mask(spec, (n,) + model.shapes[i], rng.child(i))
    return masks


def snn_loss_and_grads(model: SnnModel, spikes, labels, masks=None):
    """Loss on ``scores / T`` and surrogate-gradient weight updates for one batch.

    Traces ``a(T)`` stand in for layer activations and each spiking layer's
    derivative is replaced by ``(1 + Δa) / v_th``.
    """
    T = spikes.shape[0]
    n = spikes.shape[1]
    scores, rec = simulate(model, spikes, masks=masks, record=True)
    losses, g = cross_entropy(scores / T, labels)
    g /= n
    h = rec["input"]
    caches = [None] * len(model.layers)
    j = 0
    for i, spec in enumerate(model.layers):
        if spec.kind == "relu":
            p = model.neurons[j]
            delta = rec["trace"][i] - rec["prev"][i]
            caches[i] = np.maximum((1.0 + delta) / p.v_th, 0.0)
            h = rec["trace"][i]
            j += 1
        elif spec.kind == "dropout":
            caches[i] = None if masks is None else masks.get(i)
            h = h if caches[i] is None else h * caches[i]
        else:
            h, caches[i] = layer_forward(spec, model.params[i], h)
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        spec = model.layers[i]
        if spec.kind == "relu":
            g = g * caches[i]
            grads[i] = {}
        else:
            g, grads[i] = layer_backward(spec, model.params[i], g, caches[i])
    return float(losses.mean()), grads, scores


def train_snn_bp(model: SnnModel, dataset, cfg: TrainConfig) -> SnnModel:
    """Spike-based backpropagation with Poisson inputs over ``model.T`` steps."""
    if model.provenance != "spike-trained":
        raise ConfigError("train_snn_bp needs a spike-trained model")
    if any(p.leak != "exponential" for p in model.neurons):
        raise ConfigError("spike-based training uses LIF neurons")
    ann._check_dataset(dataset, model.n_classes)
    model = model.copy()
    opt = SGD(model.params, cfg.momentum, cfg.weight_decay)
    root = SeededRng(cfg.seed)
    n = len(dataset)
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.rate_at(epoch)
        order = root.child(0).child(epoch).generator().permutation(n)
        total, hits = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            batch_rng = root.child(1).child(epoch).child(b)
            spikes = encode_batch(dataset.x[idx], model.T, batch_rng.child(0))
            masks = _dropout_masks(model, len(idx), batch_rng.child(1))
            loss, grads, scores = snn_loss_and_grads(model, spikes, dataset.y[idx], masks)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            total += loss * len(idx)
            hits += int((scores.argmax(axis=1) == dataset.y[idx]).sum())
            opt.step(grads, lr)
        log.info("snn epoch %d lr=%.4g loss=%.4f train_acc=%.4f", epoch, lr, total / n, hits / n)
    return model
