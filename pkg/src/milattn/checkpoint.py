"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"MILATTN1"
    u32 field count, then one u32 per ModelConfig field in declaration order
    b"PARAMS00", u32 tensor count, then per tensor:
        u32 name length, name (utf-8), u32 rank, u32 dims..., f64 data
    optional b"ADAMST00": u64 step, f64 lr beta1 beta2 eps clip_norm,
        then the first and second moments as two tensor lists (same encoding)
"""
from __future__ import annotations

import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

from .model import ModelConfig, check_params
from .optimizer import Adam

MAGIC = b"MILATTN1"
PARAMS_TAG = b"PARAMS00"
ADAM_TAG = b"ADAMST00"


class CheckpointError(Exception):
    pass


def _pack_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensors(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (length,) = self.unpack("<I")
            name = self.take(length).decode()
            (rank,) = self.unpack("<I")
            dims = self.unpack(f"<{rank}I")
            size = int(np.prod(dims)) if rank else 1
            out[name] = np.frombuffer(self.take(8 * size), dtype="<f8").astype(np.float64).reshape(dims)
        return out


def encode_checkpoint(config: ModelConfig, params: dict[str, np.ndarray],
                      adam: Adam | None = None) -> bytes:
    vals = [int(getattr(config, f.name)) for f in fields(ModelConfig)]
    parts = [MAGIC, struct.pack(f"<I{len(vals)}I", len(vals), *vals), PARAMS_TAG, _pack_tensors(params)]
    if adam is not None:
        parts.append(ADAM_TAG)
        parts.append(struct.pack("<Q5d", adam.step_count, adam.lr, adam.beta1, adam.beta2,
                                 adam.eps, adam.clip_norm))
        parts.append(_pack_tensors({k: adam.m[k] for k in params if k in adam.m}))
        parts.append(_pack_tensors({k: adam.v[k] for k in params if k in adam.v}))
    return b"".join(parts)


def decode_checkpoint(buf: bytes):
    """Returns ``(config, params, adam_or_None)``; malformed input raises CheckpointError."""
    try:
        return _decode(buf)
    except (UnicodeDecodeError, struct.error, ValueError, OverflowError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None


def _decode(buf: bytes):
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint")
    (count,) = r.unpack("<I")
    names = [f.name for f in fields(ModelConfig)]
    if count != len(names):
        raise CheckpointError(f"config has {count} fields, expected {len(names)}")
    vals = r.unpack(f"<{count}I")
    kw = {}
    for f, v in zip(fields(ModelConfig), vals):
        kw[f.name] = bool(v) if f.type == "bool" else v
    try:
        config = ModelConfig(**kw)
    except ValueError as exc:
        raise CheckpointError(f"invalid config: {exc}") from None
    if r.take(len(PARAMS_TAG)) != PARAMS_TAG:
        raise CheckpointError("missing parameter section")
    params = r.tensors()
    try:
        check_params(params, config)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    adam = None
    if r.pos < len(buf):
        if r.take(len(ADAM_TAG)) != ADAM_TAG:
            raise CheckpointError("unknown trailing section")
        step, lr, b1, b2, eps, clip = r.unpack("<Q5d")
        adam = Adam(lr, b1, b2, eps, clip)
        adam.step_count = step
        adam.m = r.tensors()
        adam.v = r.tensors()
        if r.pos != len(buf):
            raise CheckpointError("trailing bytes after optimizer state")
    return config, params, adam


def save_checkpoint(path, config, params, adam=None) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(encode_checkpoint(config, params, adam))
    tmp.replace(path)


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
