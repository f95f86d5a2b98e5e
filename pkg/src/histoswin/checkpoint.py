"""Binary checkpoint format.

Layout (little-endian)::

    b"HSWN" | u32 version=1 | u32 tensor_count
    per tensor: u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | float32 data
    u32 json_len | model config as UTF-8 JSON
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .errors import CheckpointError
from .model import HybridModelConfig, param_shapes

MAGIC = b"HSWN"
VERSION = 1


def encode_checkpoint(params: Mapping[str, np.ndarray], cfg: HybridModelConfig) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)) + blob)
    return b"".join(parts)


def save_checkpoint(path, params: Mapping[str, np.ndarray], cfg: HybridModelConfig) -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(params, cfg))
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(buf: bytes, expected: Optional[HybridModelConfig] = None):
    r = _Reader(buf)
    if len(buf) < 4 or r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    params = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        try:
            name = r.take(nlen).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("corrupt tensor name") from None
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims)) if rank else 1
        params[name] = np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float32).reshape(dims)
    (jlen,) = r.unpack("<I")
    try:
        cfg = HybridModelConfig.from_dict(json.loads(r.take(jlen).decode("utf-8")))
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"corrupt config blob: {exc}") from None
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after checkpoint")
    check_against(params, expected or cfg)
    return params, cfg


def check_against(params: Mapping[str, np.ndarray], cfg: HybridModelConfig) -> None:
    """Raise ``config mismatch`` naming the first tensor that disagrees with ``cfg``."""
    shapes = param_shapes(cfg)
    for name, shape in shapes.items():
        if name not in params:
            raise CheckpointError(f"config mismatch: tensor {name!r} missing")
        if tuple(params[name].shape) != tuple(shape):
            raise CheckpointError(f"config mismatch: tensor {name!r} has shape "
                                  f"{tuple(params[name].shape)}, config expects {tuple(shape)}")
    extra = sorted(set(params) - set(shapes))
    if extra:
        raise CheckpointError(f"config mismatch: unexpected tensor {extra[0]!r}")


def load_checkpoint(path, expected: Optional[HybridModelConfig] = None):
    """Return ``(params, cfg)``; with ``expected`` the tensors are validated against it."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror or exc}") from None
    try:
        return decode_checkpoint(buf, expected)
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None


def checkpoint_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
