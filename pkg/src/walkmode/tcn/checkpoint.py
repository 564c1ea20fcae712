"""Binary checkpoints for trained models.

Layout: an 8-byte magic, a little-endian uint32 format version, a uint32
header length, a UTF-8 JSON header (config, input statistics, tensor names
and shapes, free-form metadata), then every tensor as little-endian float64
in header order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .network import ShapeError, TcnConfig, TcnModel, parameter_shapes

MAGIC = b"WALKTCN\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(config: TcnConfig) -> str:
    return hashlib.sha256(json.dumps(config.to_dict(), sort_keys=True).encode()).hexdigest()


def save_checkpoint(model: TcnModel, path, meta: Optional[dict] = None) -> None:
    names = sorted(model.params)
    header = {
        "config": model.config.to_dict(),
        "config_sha256": config_hash(model.config),
        "input_mean": [float(v) for v in model.input_mean],
        "input_std": [float(v) for v in model.input_std],
        "tensors": [[n, list(model.params[n].shape)] for n in names],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes())


def read_header(path) -> dict:
    return _parse(Path(path).read_bytes())[0]


def load_checkpoint(path) -> TcnModel:
    header, tensors = _parse(Path(path).read_bytes())
    config = TcnConfig.from_dict(header["config"])
    expected = parameter_shapes(config)
    if set(expected) != set(tensors):
        raise CheckpointError("tensor names do not match the stored configuration")
    for name, shape in expected.items():
        if tensors[name].shape != tuple(shape):
            raise ShapeError(f"{name}: stored shape {tensors[name].shape}, config implies {tuple(shape)}")
    model = TcnModel(
        config,
        {n: tensors[n] for n in expected},
        np.asarray(header["input_mean"], dtype=np.float64),
        np.asarray(header["input_std"], dtype=np.float64),
    )
    model.check()
    return model


def _parse(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise CheckpointError("truncated checkpoint header")
    version, hlen = struct.unpack_from("<II", raw, pos)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += 8
    if len(raw) < pos + hlen:
        raise CheckpointError("truncated checkpoint header")
    header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    tensors = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if len(raw) < pos + nbytes:
            raise CheckpointError(f"truncated checkpoint: tensor {name} incomplete")
        tensors[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
        pos += nbytes
    if pos != len(raw):
        raise CheckpointError("trailing bytes after the last tensor")
    return header, tensors
