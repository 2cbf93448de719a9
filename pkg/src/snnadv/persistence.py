"""Versioned binary container for ANN and SNN models.

Layout::

    b"SNNADV"  magic
    u16        format version (little-endian)
    u32        header length
    header     UTF-8 JSON: architecture, parameter manifest, neuron
               parameters, horizon, provenance, balance report
    payload    float64 little-endian, row-major, parameters in manifest order
    32 bytes   SHA-256 of everything above
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .ann import AnnModel, LayerSpec
from .errors import ChecksumError, FormatError, VersionError
from .snn import BalanceReport, NeuronParams, SnnModel

MAGIC = b"SNNADV"
VERSION = 1
_PREFIX = struct.Struct("<6sHI")
_DIGEST = 32


def _neuron_dict(p: NeuronParams):
    d = asdict(p)
    d["tau"] = None if math.isinf(p.tau) else p.tau
    return d


def _header(model):
    head = {
        "kind": "ann" if isinstance(model, AnnModel) else "snn",
        "input_shape": list(model.input_shape),
        "layers": [asdict(s) for s in model.layers],
        "params": [[[name, list(arr.shape)] for name, arr in p.items()] for p in model.params],
    }
    if isinstance(model, SnnModel):
        head["neurons"] = [_neuron_dict(p) for p in model.neurons]
        head["T"] = model.T
        head["provenance"] = model.provenance
        head["balance"] = None if model.balance is None else {
            "thresholds": list(model.balance.thresholds),
            "T_cal": model.balance.T_cal,
            "n_samples": model.balance.n_samples,
        }
    return head


def dumps(model) -> bytes:
    header = json.dumps(_header(model), sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes()
                       for p in model.params for arr in p.values())
    body = _PREFIX.pack(MAGIC, VERSION, len(header)) + header + payload
    return body + hashlib.sha256(body).digest()


def loads(blob: bytes):
    if len(blob) < _PREFIX.size + _DIGEST:
        raise FormatError("model file is truncated", len(blob))
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError("not a snnadv model file (bad magic)", 0)
    if version != VERSION:
        raise VersionError(f"unsupported model format version {version} (expected {VERSION})", 6)
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("model checksum mismatch", len(body))
    start = _PREFIX.size
    head = json.loads(body[start:start + hlen])
    offset = start + hlen
    params = []
    for manifest in head["params"]:
        p = {}
        for name, shape in manifest:
            count = int(np.prod(shape, dtype=np.int64))
            if offset + 8 * count > len(body):
                raise FormatError("weight payload is truncated", offset)
            p[name] = np.frombuffer(body, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
            offset += 8 * count
        params.append(p)
    if offset != len(body):
        raise FormatError("trailing bytes after weight payload", offset)
    layers = tuple(LayerSpec(**d) for d in head["layers"])
    if head["kind"] == "ann":
        return AnnModel(tuple(head["input_shape"]), layers, params)
    neurons = []
    for d in head["neurons"]:
        d = dict(d)
        d["tau"] = math.inf if d["tau"] is None else d["tau"]
        neurons.append(NeuronParams(**d))
    bal = head["balance"]
    balance = None if bal is None else BalanceReport(tuple(bal["thresholds"]), bal["T_cal"], bal["n_samples"])
    return SnnModel(tuple(head["input_shape"]), layers, params, neurons, head["T"], head["provenance"], balance)


def save_model(model, path):
    Path(path).write_bytes(dumps(model))


def load_model(path):
    return loads(Path(path).read_bytes())
