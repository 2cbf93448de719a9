"""MNIST IDX and CIFAR-10 binary readers plus the in-memory ``Dataset``.

Byte images are normalised to zero mean per channel and then divided by
one common scale so every pixel satisfies ``|x| <= 1``. IDX files holding
float64 payloads (type code 0x0E) are taken as already normalised; that is
how crafted adversarial sets are stored.
"""
from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, EmptyInputError

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
_IDX_TYPES = {0x08: np.dtype(">u1"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8")}
CIFAR_RECORD = 1 + 3 * 32 * 32


@dataclass(frozen=True)
class NormStats:
    mean: tuple  # per channel, in [0, 1] pixel units
    scale: float

    def apply(self, raw):
        mean = np.asarray(self.mean).reshape((1, -1) + (1,) * (raw.ndim - 2))
        return np.clip((raw - mean) / self.scale, -1.0, 1.0)

    def domain(self, shape):
        """Normalised images of raw pixels 0 and 1, broadcast to ``shape``."""
        mean = np.asarray(self.mean, dtype=np.float64).reshape((-1,) + (1,) * (len(shape) - 1))
        lo = np.broadcast_to((0.0 - mean) / self.scale, shape)
        hi = np.broadcast_to((1.0 - mean) / self.scale, shape)
        return np.clip(lo, -1, 1), np.clip(hi, -1, 1)


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    n_classes: int = 10
    stats: NormStats | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} images but {len(self.y)} labels")

    def __len__(self):
        return len(self.y)

    @property
    def shape(self):
        return self.x.shape[1:]

    def take(self, limit):
        if limit is None:
            return self
        return Dataset(self.x[:limit], self.y[:limit], self.n_classes, self.stats, dict(self.meta))

    def with_images(self, x):
        return Dataset(x, self.y, self.n_classes, self.stats, dict(self.meta))


def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, limit=None):
    """Parse an IDX file into an ndarray (first dimension truncated to ``limit``)."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header", len(raw))
    zero, type_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or type_code not in _IDX_TYPES or ndim == 0:
        raise FormatError(f"{path}: bad IDX magic 0x{int.from_bytes(raw[:4], 'big'):08x}", 0)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX dimensions", len(raw))
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    dtype = _IDX_TYPES[type_code]
    expected = header + int(np.prod(dims)) * dtype.itemsize
    if len(raw) < expected:
        raise FormatError(f"{path}: truncated payload, expected {expected} bytes", len(raw))
    n = dims[0] if limit is None else min(limit, dims[0])
    count = n * int(np.prod(dims[1:], dtype=np.int64))
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=header)
    return data.reshape((n,) + tuple(dims[1:])), type_code


def write_idx(path, array, type_code=0x08):
    dtype = _IDX_TYPES[type_code]
    array = np.ascontiguousarray(array)
    head = struct.pack(">HBB", 0, type_code, array.ndim)
    head += struct.pack(">" + "I" * array.ndim, *array.shape)
    Path(path).write_bytes(head + array.astype(dtype).tobytes())


def _labels_path(images_path):
    p = Path(images_path)
    name = p.name.replace("images-idx3", "labels-idx1").replace("images", "labels")
    return p.with_name(name)


def compute_stats(raw_unit):
    """Per-channel mean and the common scale that maps every pixel into [-1, 1]."""
    axes = (0,) + tuple(range(2, raw_unit.ndim))
    mean = raw_unit.mean(axis=axes)
    shaped = mean.reshape((1, -1) + (1,) * (raw_unit.ndim - 2))
    scale = float(np.abs(raw_unit - shaped).max())
    return NormStats(tuple(float(m) for m in mean), scale if scale > 0 else 1.0)


def load_dataset(path, format="mnist-idx", limit=None, labels_path=None, stats=None):
    """Read ``limit`` leading records of an MNIST-IDX or CIFAR-10 binary file.

    For ``mnist-idx`` ``path`` names the image file; the label file defaults
    to the sibling with ``images`` replaced by ``labels``. Pass ``stats``
    (e.g. from the training split) to normalise with fixed statistics.
    """
    if format == "mnist-idx":
        images, type_code = read_idx(path, limit)
        labels, _ = read_idx(labels_path or _labels_path(path), limit)
        if images.ndim == 3:
            images = images[:, None, :, :]
        if len(labels) != len(images):
            raise FormatError(f"{len(images)} images but {len(labels)} labels")
        labels = labels.astype(np.int64).reshape(-1)
        if type_code != 0x08:
            return Dataset(images.astype(np.float64), labels, 10, stats)
    elif format == "cifar10-bin":
        raw = _read_bytes(path)
        if len(raw) % CIFAR_RECORD:
            raise FormatError(
                f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}-byte records",
                len(raw) - len(raw) % CIFAR_RECORD,
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if limit is not None:
            records = records[:limit]
        labels = records[:, 0].astype(np.int64)
        if labels.size and labels.max() > 9:
            bad = int(np.argmax(labels > 9))
            raise FormatError(f"{path}: label {labels[bad]} out of range", bad * CIFAR_RECORD)
        images = records[:, 1:].reshape(-1, 3, 32, 32)
    else:
        raise ValueError(f"unknown dataset format {format!r}")
    if len(labels) == 0:
        raise EmptyInputError(f"{path}: no records")
    unit = images.astype(np.float64) / 255.0
    stats = stats or compute_stats(unit)
    return Dataset(stats.apply(unit), labels, 10, stats)


def save_image_set(directory, x, y, meta=None):
    """Store float64 images and labels as IDX files (plus optional JSON metadata)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_idx(d / "images.idx", np.asarray(x, dtype=np.float64), 0x0E)
    write_idx(d / "labels.idx", np.asarray(y), 0x08)
    if meta is not None:
        (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_image_set(directory, limit=None):
    d = Path(directory)
    ds = load_dataset(d / "images.idx", "mnist-idx", limit, labels_path=d / "labels.idx")
    meta_path = d / "meta.json"
    if meta_path.exists():
        ds.meta = json.loads(meta_path.read_text())
    return ds
