"""Feed-forward networks with hand-derived gradients.

The layer vocabulary is small on purpose: ``conv2d`` (stride 1, same
padding), ``avgpool`` (non-overlapping), ``dense``, ``relu``, ``dropout``
and ``flatten``. Inputs are batched, shape ``(N, *input_shape)``; a single
unbatched sample is accepted wherever it is unambiguous.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, EmptyInputError, LabelError, TrainingDiverged, ConfigError
from .tensor import SeededRng

log = logging.getLogger(__name__)

KINDS = ("conv2d", "avgpool", "dense", "relu", "dropout", "flatten")
PARAMETRIC = ("conv2d", "dense")
EVAL_CHUNK = 500


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0
    kernel: int = 0
    window: int = 0
    rate: float = 0.0
    bias: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind in PARAMETRIC and self.units <= 0:
            raise ConfigError(f"{self.kind} needs a positive unit/map count")
        if self.kind == "conv2d" and (self.kernel <= 0 or self.kernel % 2 == 0):
            raise ConfigError("conv2d kernel must be a positive odd size")
        if self.kind == "avgpool" and self.window <= 0:
            raise ConfigError("avgpool window must be positive")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ConfigError("dropout rate must lie in [0, 1)")


def conv2d(maps, kernel, bias=True):
    return LayerSpec("conv2d", units=maps, kernel=kernel, bias=bias)


def avgpool(window):
    return LayerSpec("avgpool", window=window)


def dense(units, bias=True):
    return LayerSpec("dense", units=units, bias=bias)


def relu():
    return LayerSpec("relu")


def dropout(rate):
    return LayerSpec("dropout", rate=rate)


def flatten():
    return LayerSpec("flatten")


def output_shape(spec: LayerSpec, shape: tuple) -> tuple:
    kind = spec.kind
    if kind == "conv2d":
        if len(shape) != 3:
            raise DimensionError(f"conv2d expects (C, H, W) input, got {shape}")
        return (spec.units, shape[1], shape[2])
    if kind == "avgpool":
        if len(shape) != 3 or shape[1] % spec.window or shape[2] % spec.window:
            raise DimensionError(f"avgpool({spec.window}) cannot tile input {shape}")
        return (shape[0], shape[1] // spec.window, shape[2] // spec.window)
    if kind == "dense":
        if len(shape) != 1:
            raise DimensionError(f"dense expects a flat input, got {shape}; add flatten")
        return (spec.units,)
    if kind == "flatten":
        return (math.prod(shape),)
    return shape


def param_shapes(spec: LayerSpec, shape: tuple) -> dict:
    if spec.kind == "conv2d":
        shapes = {"W": (spec.units, shape[0], spec.kernel, spec.kernel)}
    elif spec.kind == "dense":
        shapes = {"W": (spec.units, shape[0])}
    else:
        return {}
    if spec.bias:
        shapes["b"] = (spec.units,)
    return shapes


def parse_architecture(text: str, dropout_rate: float = 0.0, bias: bool = True):
    """Parse the compact ``1x28x28-64c5-2s-1024fc-10o`` notation.

    ``<n>c<k>`` is a conv layer followed by ReLU, ``<w>s`` average pooling,
    ``<n>fc`` a dense layer followed by ReLU and ``<n>o`` the output layer.
    A dropout layer follows every hidden conv/fc when ``dropout_rate > 0``;
    ``flatten`` is inserted before the first dense layer on image inputs.
    Returns ``(input_shape, layers)``.
    """
    tokens = text.strip().split("-")
    input_shape = tuple(int(v) for v in re.split(r"[x×]", tokens[0]))
    layers = []
    ndim = len(input_shape)
    for tok in tokens[1:]:
        if m := re.fullmatch(r"(\d+)c(\d+)", tok):
            layers += [conv2d(int(m[1]), int(m[2]), bias), relu()]
        elif m := re.fullmatch(r"(\d+)s", tok):
            layers.append(avgpool(int(m[1])))
            continue
        elif m := re.fullmatch(r"(\d+)(fc|o)", tok):
            if ndim != 1:
                layers.append(flatten())
                ndim = 1
            layers.append(dense(int(m[1]), bias))
            if m[2] == "o":
                continue
            layers.append(relu())
        else:
            raise ConfigError(f"cannot parse architecture token {tok!r}")
        if dropout_rate > 0:
            layers.append(dropout(dropout_rate))
    return input_shape, tuple(layers)


@dataclass
class AnnModel:
    input_shape: tuple
    layers: tuple
    params: list = field(repr=False)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.layers = tuple(self.layers)
        shapes = [self.input_shape]
        for spec, p in zip(self.layers, self.params):
            want = param_shapes(spec, shapes[-1])
            got = {k: tuple(v.shape) for k, v in p.items()}
            if want != got:
                raise DimensionError(f"{spec.kind} parameters {got} do not match geometry {want}")
            shapes.append(output_shape(spec, shapes[-1]))
        if len(self.params) != len(self.layers):
            raise DimensionError("one parameter dict per layer is required")
        if len(shapes[-1]) != 1:
            raise DimensionError(f"network must end in a flat logits vector, got {shapes[-1]}")
        self.shapes = shapes

    @classmethod
    def build(cls, input_shape, layers, seed=0):
        """Initialise weights uniformly in ``±sqrt(6 / fan_in)``; biases start at zero."""
        rng = SeededRng(seed)
        shape = tuple(input_shape)
        params = []
        for i, spec in enumerate(layers):
            p = {}
            for name, pshape in param_shapes(spec, shape).items():
                if name == "W":
                    fan_in = math.prod(pshape[1:])
                    bound = math.sqrt(6.0 / fan_in)
                    p[name] = rng.child(i).generator().uniform(-bound, bound, pshape)
                else:
                    p[name] = np.zeros(pshape)
            params.append(p)
            shape = output_shape(spec, shape)
        return cls(shape_tuple(input_shape), layers, params)

    @property
    def n_classes(self) -> int:
        return self.shapes[-1][0]

    def copy(self) -> "AnnModel":
        return replace(self, params=[{k: v.copy() for k, v in p.items()} for p in self.params])

    def logits(self, x):
        return forward(self, x)

    def input_gradient(self, x, y):
        return input_gradient(self, x, y)

    def predict(self, x):
        return np.argmax(forward(self, x), axis=-1)


def shape_tuple(shape):
    return tuple(int(s) for s in shape)


# -- per-layer kernels ------------------------------------------------------

def _conv_cols(x, k):
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N, C, H, W, k, k
    n, c, h, w = x.shape
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)


def layer_forward(spec, p, x, mask=None):
    """Apply one layer to a batch; returns ``(out, cache)`` for :func:`layer_backward`."""
    kind = spec.kind
    if kind == "dense":
        out = x @ p["W"].T
        if "b" in p:
            out = out + p["b"]
        return out, x
    if kind == "conv2d":
        n, _, h, w = x.shape
        cols = _conv_cols(x, spec.kernel)
        out = cols @ p["W"].reshape(spec.units, -1).T
        if "b" in p:
            out = out + p["b"]
        out = out.reshape(n, h, w, spec.units).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), (cols, x.shape)
    if kind == "avgpool":
        s = spec.window
        out = x[:, :, ::s, ::s].copy()
        for i in range(s):
            for j in range(s):
                if i or j:
                    out += x[:, :, i::s, j::s]
        out *= 1.0 / (s * s)
        return out, x.shape
    if kind == "relu":
        return np.maximum(x, 0.0), x > 0
    if kind == "dropout":
        if mask is None:
            return x, None
        return x * mask, mask
    if kind == "flatten":
        return x.reshape(x.shape[0], -1), x.shape
    raise ConfigError(kind)


def layer_backward(spec, p, grad, cache):
    """Return ``(grad_input, param_grads)`` for one layer."""
    kind = spec.kind
    if kind == "dense":
        x = cache
        grads = {"W": grad.T @ x}
        if "b" in p:
            grads["b"] = grad.sum(axis=0)
        return grad @ p["W"], grads
    if kind == "conv2d":
        cols, xshape = cache
        n, c, h, w = xshape
        k = spec.kernel
        g2 = grad.transpose(0, 2, 3, 1).reshape(n * h * w, spec.units)
        grads = {"W": (g2.T @ cols).reshape(p["W"].shape)}
        if "b" in p:
            grads["b"] = g2.sum(axis=0)
        dcols = (g2 @ p["W"].reshape(spec.units, -1)).reshape(n, h, w, c, k, k)
        pad = k // 2
        dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, pad:pad + h, pad:pad + w], grads
    if kind == "avgpool":
        s = spec.window
        g = np.repeat(np.repeat(grad, s, axis=2), s, axis=3) / (s * s)
        return g, {}
    if kind == "relu":
        return grad * cache, {}
    if kind == "dropout":
        return (grad if cache is None else grad * cache), {}
    if kind == "flatten":
        return grad.reshape(cache), {}
    raise ConfigError(kind)


def dropout_mask(spec, shape, rng: SeededRng):
    keep = rng.generator().random(shape) >= spec.rate
    return keep / (1.0 - spec.rate)


# -- whole-network passes ---------------------------------------------------

def _batched(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape == model.input_shape:
        return x[None], True
    if x.shape[1:] != model.input_shape:
        raise DimensionError(f"input shape {x.shape} does not match model input {model.input_shape}")
    return x, False


def _run(model, x, mode="eval", rng=None):
    caches = []
    has_dropout = any(s.kind == "dropout" and s.rate > 0 for s in model.layers)
    if mode == "train" and has_dropout and rng is None:
        raise ConfigError("train-mode forward with dropout needs an rng")
    for i, (spec, p) in enumerate(zip(model.layers, model.params)):
        mask = None
        if spec.kind == "dropout" and mode == "train" and spec.rate > 0:
            mask = dropout_mask(spec, x.shape, rng.child(i))
        x, cache = layer_forward(spec, p, x, mask)
        caches.append(cache)
    return x, caches


def _unwind(model, caches, grad):
    pgrads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        grad, pgrads[i] = layer_backward(model.layers[i], model.params[i], grad, caches[i])
    return grad, pgrads


def forward(model: AnnModel, x, mode: str = "eval", rng: SeededRng | None = None):
    """Logits for ``x``; dropout is active only in ``train`` mode (inverted scaling)."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', not {mode!r}")
    xb, single = _batched(model, x)
    out, _ = _run(model, xb, mode, rng)
    return out[0] if single else out


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Per-sample softmax cross-entropy and its gradient w.r.t. the logits."""
    zmax = logits.max(axis=1, keepdims=True)
    shifted = logits - zmax
    lse = np.log(np.exp(shifted).sum(axis=1))
    idx = np.arange(len(labels))
    losses = lse - shifted[idx, labels]
    grad = softmax(logits)
    grad[idx, labels] -= 1.0
    return losses, grad


def _labels(model, y, n):
    y = np.atleast_1d(np.asarray(y))
    if y.shape != (n,) or not np.issubdtype(y.dtype, np.integer):
        raise LabelError(f"expected {n} integer labels, got {y!r}")
    if y.min(initial=0) < 0 or y.max(initial=0) >= model.n_classes:
        raise LabelError(f"labels must lie in [0, {model.n_classes})")
    return y.astype(np.int64)


def loss_and_grads(model: AnnModel, x, y, mode="eval", rng=None):
    """Mean cross-entropy ``J`` with its parameter and input gradients.

    Returns ``(J, param_grads, grad_x)`` where ``param_grads`` mirrors
    ``model.params``. ``grad_x`` has the shape of ``x``.
    """
    xb, single = _batched(model, x)
    labels = _labels(model, y, len(xb))
    logits, caches = _run(model, xb, mode, rng)
    losses, g = cross_entropy(logits, labels)
    gx, pgrads = _unwind(model, caches, g / len(xb))
    return float(losses.mean()), pgrads, (gx[0] if single else gx)


def input_gradient(model: AnnModel, x, y):
    """Per-sample ``∇x J(x_i, y_i)`` in eval mode (no batch averaging)."""
    xb, single = _batched(model, x)
    labels = _labels(model, y, len(xb))
    out = np.empty_like(xb)
    for s in range(0, len(xb), EVAL_CHUNK):
        logits, caches = _run(model, xb[s:s + EVAL_CHUNK])
        _, g = cross_entropy(logits, labels[s:s + EVAL_CHUNK])
        out[s:s + EVAL_CHUNK], _ = _unwind(model, caches, g)
    return out[0] if single else out


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.05
    anneal_epochs: tuple = ()
    batch_size: int = 32
    seed: int = 0
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "anneal_epochs", tuple(int(e) for e in self.anneal_epochs))
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        a = self.anneal_epochs
        if any(b <= c for c, b in zip(a, a[1:])) or any(e >= self.epochs or e < 1 for e in a):
            raise ConfigError("anneal_epochs must be strictly increasing and within [1, epochs)")

    def rate_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``: divided by 10 at each anneal epoch reached."""
        drops = sum(1 for e in self.anneal_epochs if epoch >= e)
        return self.learning_rate / 10.0 ** drops


class SGD:
    """Plain SGD with optional momentum and L2 weight decay."""

    def __init__(self, params, momentum=0.0, weight_decay=0.0):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]

    def step(self, grads, lr):
        for p, g, vel in zip(self.params, grads, self.velocity):
            for k in p:
                d = g[k]
                if self.weight_decay:
                    d = d + self.weight_decay * p[k]
                if self.momentum:
                    vel[k] *= self.momentum
                    vel[k] += d
                    d = vel[k]
                p[k] -= lr * d


def _check_dataset(dataset, n_classes):
    if len(dataset) == 0:
        raise EmptyInputError("dataset is empty")
    if dataset.y.min() < 0 or dataset.y.max() >= n_classes:
        raise LabelError(f"labels must lie in [0, {n_classes})")


def train(model: AnnModel, dataset, cfg: TrainConfig) -> AnnModel:
    """Mini-batch SGD on mean cross-entropy; returns a new model."""
    _check_dataset(dataset, model.n_classes)
    model = model.copy()
    opt = SGD(model.params, cfg.momentum, cfg.weight_decay)
    root = SeededRng(cfg.seed)
    n = len(dataset)
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.rate_at(epoch)
        order = root.child(0).child(epoch).generator().permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads, _ = loss_and_grads(
                model, dataset.x[idx], dataset.y[idx], "train", root.child(1).child(epoch).child(b)
            )
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            total += loss * len(idx)
            opt.step(grads, lr)
        log.info("ann epoch %d lr=%.4g loss=%.4f", epoch, lr, total / n)
    return model


def accuracy(model, dataset) -> float:
    """Fraction of samples whose argmax logit (lowest index on ties) equals the label."""
    if len(dataset) == 0:
        raise EmptyInputError("accuracy of an empty dataset is undefined")
    hits = 0
    for s in range(0, len(dataset), EVAL_CHUNK):
        pred = np.argmax(forward(model, dataset.x[s:s + EVAL_CHUNK]), axis=1)
        hits += int((pred == dataset.y[s:s + EVAL_CHUNK]).sum())
    return hits / len(dataset)
