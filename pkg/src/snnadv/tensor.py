"""Dense float64 arithmetic and seeded random streams.

Tensors are plain ``numpy.ndarray`` objects with dtype float64 in C
(row-major) order; the helpers here pin down the few conventions the rest
of the package depends on (``sign(0) == 0``, shape checking, reproducible
random streams).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

__all__ = [
    "as_tensor",
    "matmul",
    "elementwise",
    "add",
    "sub",
    "mul",
    "sign",
    "clamp",
    "SeededRng",
    "rng_uniform",
    "rng_gaussian",
]


def as_tensor(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64, order="C")


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _check_shapes(op, a, b):
    if a.ndim and b.ndim and a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _check_shapes("add", a, b)
    return a + b


def sub(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _check_shapes("sub", a, b)
    return a - b


def mul(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _check_shapes("mul", a, b)
    return a * b


def sign(a) -> np.ndarray:
    # np.sign already maps 0 -> 0; +0.0 is returned for -0.0 as well.
    return np.sign(as_tensor(a)) + 0.0


def clamp(a, lo, hi) -> np.ndarray:
    a = as_tensor(a)
    lo, hi = as_tensor(lo), as_tensor(hi)
    for bound in (lo, hi):
        _check_shapes("clamp", a, bound)
    return np.minimum(np.maximum(a, lo), hi)


_OPS = {"add": add, "sub": sub, "mul": mul, "sign": sign, "clamp": clamp}


def elementwise(op: str, *args) -> np.ndarray:
    """Dispatch one of ``add, sub, mul, sign, clamp`` by name."""
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


@dataclass(frozen=True)
class SeededRng:
    """A reproducible random stream identified by ``(seed, stream)``.

    ``stream`` is a path of non-negative integers; ``child(i)`` extends it,
    so e.g. ``SeededRng(7).child(sample).child(step)`` names an independent
    stream per sample and timestep. Every call to :meth:`generator` starts
    the stream from the beginning.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def __post_init__(self):
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if any(s < 0 for s in self.stream):
            raise ValueError("stream ids must be non-negative")

    def child(self, index: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream + (int(index),))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.PCG64(seq))


def rng_uniform(rng: SeededRng, shape) -> np.ndarray:
    return rng.generator().random(shape)


def rng_gaussian(rng: SeededRng, shape) -> np.ndarray:
    return rng.generator().standard_normal(shape)
