"""Binary checkpoint format: named float32 tensors plus the model config.

Layout (all integers little-endian, fixed regardless of host):

    magic "DFVT" | u32 format version | u32 config length | config text
    | u32 tensor count | per tensor: u16 name length, name (UTF-8),
      u8 rank, u32 dims..., float32 LE values
    | u32 CRC-32 of everything before it

Values are stored as 32-bit floats (the training precision), so a save/load
round trip of a float32 model is bit-exact. The checksum is verified on
load; any corruption is rejected.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .config import ModelConfig, model_config_from_text, model_config_to_text
from .model import ModelParams, parameter_shapes
from .tensor import Tensor

MAGIC = b"DFVT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupted, or config-incompatible checkpoint."""


def checkpoint_bytes(params: ModelParams) -> bytes:
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    cfg_text = model_config_to_text(params.config).encode("utf-8")
    chunks.append(struct.pack("<I", len(cfg_text)))
    chunks.append(cfg_text)
    tensors = list(params.named())
    chunks.append(struct.pack("<I", len(tensors)))
    for name, t in tensors:
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", len(t.shape)))
        for dim in t.shape:
            chunks.append(struct.pack("<I", dim))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path: str, params: ModelParams) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params))


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.source}: truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: too short to be a checkpoint")
    body, (stored_crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != stored_crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupted")

    r = _Reader(body, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    cfg_text = r.take(r.u32()).decode("utf-8")
    cfg = model_config_from_text(cfg_text, source=path)

    count = r.u32()
    tensors: dict[str, Tensor] = {}
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        rank = r.u8()
        shape = tuple(r.u32() for _ in range(rank))
        n_values = int(np.prod(shape)) if shape else 1
        raw = r.take(n_values * 4)
        data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32, copy=True)
        tensors[name] = Tensor(data, requires_grad=True)
    if r.pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after tensor records")

    expected = parameter_shapes(cfg)
    if list(tensors) != list(expected):
        raise CheckpointError(f"{path}: tensor names do not match the embedded config")
    return ModelParams(cfg, tensors)


def compatible(a: ModelConfig, b: ModelConfig) -> bool:
    """True when two configs describe the same parameter space."""
    return parameter_shapes(a) == parameter_shapes(b)
