"""FGSM-family attacks and the ANN- / SNN-crafted generation pipelines.

Attack functions take any ``model`` exposing ``input_gradient(x, y)``
(per-sample gradient of the cross-entropy w.r.t. the input) and work on a
single sample or a batch. The L∞ bound holds as computed in floating
point: ``abs(x_adv - x) <= eps`` element-wise, with no rounding slack.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .conversion import build_transformed_ann
from .errors import ConfigError
from .snn import SnnModel, poisson_encode, rate_decode
from .tensor import SeededRng, sign

METHODS = ("fgsm", "rfgsm", "ifgsm")
MODES = ("non-targeted", "targeted-random", "targeted-least-likely")
PRESET_EPSILONS = (8 / 255, 16 / 255, 32 / 255, 64 / 255)

# stream ids under SeededRng(cfg.seed).child(sample)
NOISE_STREAM = 0
TARGET_STREAM = 1
ENCODE_STREAM = 2


@dataclass(frozen=True)
class AttackConfig:
    method: str = "fgsm"
    epsilon: float = 8 / 255
    alpha: float | None = None
    steps: int = 1
    mode: str = "non-targeted"
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown attack method {self.method!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown attack mode {self.mode!r}")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError("epsilon must lie in [0, 1]")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.method != "ifgsm" and self.mode != "non-targeted":
            raise ConfigError("targeted mode is only defined for ifgsm")
        if self.method == "fgsm" and self.steps != 1:
            raise ConfigError("fgsm is a single-step attack (steps=1)")
        a = self.step_size
        if self.method == "rfgsm" and not (0 <= a < self.epsilon or a == self.epsilon == 0):
            raise ConfigError("rfgsm needs 0 <= alpha < epsilon")
        if self.method == "ifgsm" and a < self.epsilon / self.steps:
            raise ConfigError("ifgsm needs alpha >= epsilon / steps")

    @property
    def step_size(self) -> float:
        """``alpha`` with the defaults of the preset grid: ``eps/2`` (rfgsm), ``eps/k`` (ifgsm)."""
        if self.alpha is not None:
            return self.alpha
        if self.method == "rfgsm":
            return self.epsilon / 2
        if self.method == "ifgsm":
            return self.epsilon / self.steps
        return self.epsilon

    @property
    def targeted(self) -> bool:
        return self.mode != "non-targeted"

    @property
    def label(self) -> str:
        return self.method + ("-targeted" if self.targeted else "")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdvExample:
    x: np.ndarray
    x_base: np.ndarray
    x_adv: np.ndarray
    y_true: int
    y_target: int | None = None
    source: str = ""
    config: AttackConfig | None = field(default=None, repr=False)


def clip_eps(candidate, x, eps):
    """Element-wise projection onto the eps-ball around ``x``.

    ``x + eps`` is rounded, so the clipped value can sit one ulp outside the
    ball when measured as ``abs(result - x)``. Such entries are stepped
    towards ``x`` until the computed distance is at most ``eps``.
    """
    out = np.minimum(np.maximum(candidate, x - eps), x + eps)
    over = np.abs(out - x) > eps
    while np.any(over):
        out = np.where(over, np.nextafter(out, x), out)
        over = np.abs(out - x) > eps
    return out


def fgsm(model, x, y_true, eps):
    """``x + eps * sign(∇x J(x, y_true))``, projected as in :func:`clip_eps`."""
    x = np.asarray(x, dtype=np.float64)
    return clip_eps(x + eps * sign(model.input_gradient(x, y_true)), x, eps)


def _rfgsm(model, x, y_true, eps, alpha, noise):
    x_prime = x + alpha * sign(noise)
    x_adv = x_prime + (eps - alpha) * sign(model.input_gradient(x_prime, y_true))
    return clip_eps(x_adv, x, eps)


def rfgsm(model, x, y_true, eps, alpha, rng: SeededRng):
    """Random sign step of size ``alpha`` followed by an FGSM step of ``eps - alpha``."""
    if not 0 <= alpha < eps and not alpha == eps == 0:
        raise ConfigError("rfgsm needs 0 <= alpha < epsilon")
    x = np.asarray(x, dtype=np.float64)
    noise = rng.generator().standard_normal(x.shape)
    return _rfgsm(model, x, y_true, eps, alpha, noise)


def ifgsm(model, x, y, eps, alpha=None, steps=1, y_target=None):
    """Iterated FGSM with per-iterate projection onto the eps-ball around ``x``.

    Without ``y_target`` the loss of ``y`` is ascended; with it the loss of
    ``y_target`` is descended (``y`` is then only used to reject targets
    equal to the true label).
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    alpha = eps / steps if alpha is None else alpha
    x = np.asarray(x, dtype=np.float64)
    if y_target is not None:
        if np.any(np.asarray(y_target) == np.asarray(y)):
            raise ConfigError("targeted attack needs y_target != y_true")
        label, direction = y_target, -1.0
    else:
        label, direction = y, 1.0
    x_adv = x
    for _ in range(steps):
        x_adv = clip_eps(x_adv + direction * alpha * sign(model.input_gradient(x_adv, label)), x, eps)
    return x_adv


def random_targets(y_true, n_classes, rng: SeededRng, start=0):
    """Uniform wrong class per sample from stream ``rng.child(start + i).child(TARGET_STREAM)``."""
    out = np.empty(len(y_true), dtype=np.int64)
    for i, y in enumerate(y_true):
        t = int(rng.child(start + i).child(TARGET_STREAM).generator().integers(n_classes - 1))
        out[i] = t + (t >= y)
    return out


def least_likely_targets(model, x, y_true):
    logits = np.array(model.logits(x), dtype=np.float64)
    logits[np.arange(len(y_true)), y_true] = np.inf
    return np.argmin(logits, axis=1)


def craft(model, x, y, cfg: AttackConfig, domain=None, n_classes=None, start=0):
    """Batch attack of ``x`` (the base images) under ``cfg``.

    Sample ``i`` draws its randomness from ``SeededRng(cfg.seed).child(start + i)``.
    ``domain=(lo, hi)`` optionally clamps results to the valid pixel range
    before the final eps projection. Returns ``(x_adv, y_target or None)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    root = SeededRng(cfg.seed)
    eps = cfg.epsilon
    targets = None
    if cfg.method == "fgsm":
        x_adv = fgsm(model, x, y, eps)
    elif cfg.method == "rfgsm":
        noise = np.stack([root.child(start + i).child(NOISE_STREAM).generator().standard_normal(x.shape[1:])
                          for i in range(len(x))]) if len(x) else np.zeros_like(x)
        x_adv = _rfgsm(model, x, y, eps, cfg.step_size, noise)
    else:
        if cfg.mode == "targeted-random":
            targets = random_targets(y, n_classes or model.n_classes, root, start)
        elif cfg.mode == "targeted-least-likely":
            targets = least_likely_targets(model, x, y)
        x_adv = ifgsm(model, x, y, eps, cfg.step_size, cfg.steps, targets)
    if domain is not None:
        x_adv = clip_eps(np.clip(x_adv, domain[0], domain[1]), x, eps)
    return x_adv, targets


def _examples(x, base, x_adv, y, targets, source, cfg):
    return [
        AdvExample(x[i], base[i], x_adv[i], int(y[i]),
                   None if targets is None else int(targets[i]), source, cfg)
        for i in range(len(y))
    ]


def ann_adv(dataset, model, cfg: AttackConfig, source="ann", domain=None):
    """ANN-crafted adversarial examples for every sample of ``dataset``."""
    if len(dataset) == 0:
        return []
    x_adv, targets = craft(model, dataset.x, dataset.y, cfg, domain)
    return _examples(dataset.x, dataset.x, x_adv, dataset.y, targets, source, cfg)


def rate_inputs(x, T, cfg: AttackConfig):
    """Rate-decoded Poisson encodings; sample ``i`` uses ``SeededRng(cfg.seed).child(i).child(ENCODE_STREAM)``."""
    root = SeededRng(cfg.seed)
    out = np.empty(np.shape(x))
    for i in range(len(x)):
        out[i] = rate_decode(poisson_encode(x[i], T, root.child(i).child(ENCODE_STREAM)))
    return out


def snn_adv(dataset, snn: SnnModel, cfg: AttackConfig, T=None, source="snn", domain=None, x_rate=None):
    """SNN-crafted examples: attack the rate-decoded input on the transformed ANN.

    ``x_rate`` may be supplied to reuse an encoding computed earlier with
    :func:`rate_inputs` (same ``T`` and ``cfg.seed``).
    """
    if len(dataset) == 0:
        return []
    T = T or snn.T
    surrogate = build_transformed_ann(snn)
    if x_rate is None:
        x_rate = rate_inputs(dataset.x, T, cfg)
    x_adv, targets = craft(surrogate, x_rate, dataset.y, cfg, domain, snn.n_classes)
    return _examples(dataset.x, x_rate, x_adv, dataset.y, targets, source, cfg)


def stack(examples):
    """``(x_base, x_adv, y_true)`` arrays from a list of :class:`AdvExample`."""
    return (np.stack([e.x_base for e in examples]), np.stack([e.x_adv for e in examples]),
            np.array([e.y_true for e in examples], dtype=np.int64))
