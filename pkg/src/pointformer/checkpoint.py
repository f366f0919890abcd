"""Checkpoint serialization.

Layout (all integers little-endian uint32):
  magic ``PTCK`` | format version | config JSON length | config JSON |
  block count | blocks. Each block: name length | name utf8 | ndim | dims |
  float32 little-endian data. Save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ShapeError
from .model import ModelConfig, ModelParams

MAGIC = b"PTCK"
VERSION = 1


def save_checkpoint(path, params: ModelParams) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    config_blob = json.dumps(params.config.to_dict(), sort_keys=True).encode()
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(config_blob)), config_blob]
    items = list(params.items())
    chunks.append(struct.pack("<I", len(items)))
    for name, tensor in items:
        blob = name.encode()
        arr = np.ascontiguousarray(tensor.data, dtype="<f4")
        chunks.append(struct.pack("<I", len(blob)))
        chunks.append(blob)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    path.write_bytes(b"".join(chunks))
    return path


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    try:
        config = ModelConfig.from_dict(json.loads(r.take(r.u32()).decode()))
    except (json.JSONDecodeError, TypeError, KeyError) as exc:
        raise CheckpointError(f"{path}: unreadable config block: {exc}") from exc
    arrays: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).copy()
    if r.pos != len(r.blob):
        raise CheckpointError(f"{path}: {len(r.blob) - r.pos} trailing bytes")
    params = ModelParams(config, seed=0)
    try:
        params.load_arrays(arrays)
    except ShapeError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return params, config
