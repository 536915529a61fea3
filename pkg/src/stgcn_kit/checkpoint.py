"""Binary model checkpoints.

Layout (all integers little-endian)::

    magic        8 bytes   b"STGCNKIT"
    version      u32       FORMAT_VERSION
    config_len   u32
    config       config_len bytes, UTF-8 JSON echo of ModelConfig
    n_blobs      u32
    n_blobs x    name_len u16, name (UTF-8), ndim u8, dims u32 * ndim,
                 data float64 * prod(dims), row-major
    crc32        u32 over every preceding byte

Blobs come in store order (trainable parameters), followed by the batch-norm
running statistics as ``<layer>.running_mean`` / ``<layer>.running_var``.
Loading rebuilds the model from the config echo and then overwrites every
tensor, so a round trip is bit-exact.
"""
from __future__ import annotations

import io
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .network import Model, ModelConfig, build_model

MAGIC = b"STGCNKIT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _blobs(model: Model):
    for name, value in model.store.items():
        yield name, value
    for name, rs in model.buffers.items():
        base = name.removesuffix(".running")
        yield f"{base}.running_mean", rs.mean
        yield f"{base}.running_var", rs.var


def dumps(model: Model) -> bytes:
    buf = io.BytesIO()
    config = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(config)))
    buf.write(config)
    blobs = list(_blobs(model))
    buf.write(struct.pack("<I", len(blobs)))
    for name, value in blobs:
        raw = name.encode()
        buf.write(struct.pack("<HB", len(raw), value.ndim))
        buf.write(raw)
        buf.write(struct.pack(f"<{value.ndim}I", *value.shape))
        buf.write(np.ascontiguousarray(value, dtype="<f8").tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> Model:
    if len(data) < len(MAGIC) + 12 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic header")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch (corrupted file)")
    r = _Reader(body)
    r.take(len(MAGIC))
    version, config_len = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        config = ModelConfig.from_dict(json.loads(r.take(config_len).decode()))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"invalid config echo: {exc}") from exc
    model = build_model(config)
    expected = list(_blobs(model))
    (count,) = r.unpack("<I")
    if count != len(expected):
        raise CheckpointError(f"checkpoint holds {count} tensors, model expects {len(expected)}")
    for name, target in expected:
        name_len, ndim = r.unpack("<HB")
        got = r.take(name_len).decode()
        if got != name:
            raise CheckpointError(f"tensor order mismatch: found {got!r}, expected {name!r}")
        shape = r.unpack(f"<{ndim}I")
        if tuple(shape) != target.shape:
            raise CheckpointError(f"tensor {name!r} has shape {shape}, expected {target.shape}")
        target[...] = np.frombuffer(r.take(8 * target.size), dtype="<f8").reshape(shape)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after last tensor")
    return model


def save_checkpoint(model: Model, path) -> Path:
    path = Path(path)
    path.write_bytes(dumps(model))
    return path


def load_checkpoint(path) -> Model:
    return loads(Path(path).read_bytes())
