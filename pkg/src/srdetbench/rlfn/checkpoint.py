"""Versioned binary checkpoint container.

Layout (little-endian)::

    b"SRDB"  u16 version  u32 len  <config JSON>  u32 n_tensors
    n x (u16 len  <name utf-8>  u8 ndim  ndim x u32  <float32 data>)
    u32 CRC-32 of everything above
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np
import torch

from ..errors import CorruptCheckpoint, MissingFile, ScaleMismatch, VersionMismatch
from .model import SRModel, SRModelConfig

MAGIC = b"SRDB"
FORMAT_VERSION = 1


def checkpoint_bytes(model: SRModel) -> bytes:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(cfg)), cfg]
    state = model.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        raw = name.encode("utf-8")
        arr = tensor.detach().cpu().to(torch.float32).numpy()
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: SRModel, path) -> Path:
    path = Path(path)
    data = checkpoint_bytes(model)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpoint("checkpoint is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(data: bytes) -> tuple[SRModelConfig, dict[str, np.ndarray]]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise CorruptCheckpoint("missing SRDB magic bytes")
    r = _Reader(data)
    r.take(4)
    (version,) = r.unpack("<H")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    if len(data) < 8:
        raise CorruptCheckpoint("checkpoint is truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptCheckpoint("checksum mismatch (truncated or corrupted file)")
    r = _Reader(body)
    r.take(6)
    (cfg_len,) = r.unpack("<I")
    try:
        config = SRModelConfig.from_dict(json.loads(r.take(cfg_len).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CorruptCheckpoint(f"bad config block: {exc}") from exc
    (n,) = r.unpack("<I")
    tensors = {}
    for _ in range(n):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(body):
        raise CorruptCheckpoint("trailing bytes after tensor table")
    return config, tensors


def load_checkpoint(path, expected_scale: int | None = None) -> SRModel:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"checkpoint not found: {path}")
    config, tensors = parse_checkpoint(path.read_bytes())
    if expected_scale is not None and config.scale != expected_scale:
        raise ScaleMismatch(f"{path}: checkpoint is x{config.scale}, run needs x{expected_scale}")
    model = SRModel(config)
    expected = model.state_dict()
    if set(expected) != set(tensors):
        raise CorruptCheckpoint(f"{path}: tensor names do not match the x{config.scale} architecture")
    state = {}
    for name, ref in expected.items():
        arr = tensors[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CorruptCheckpoint(f"{path}: tensor {name} has shape {arr.shape}, expected {tuple(ref.shape)}")
        state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model


def read_checkpoint_config(path) -> SRModelConfig:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"checkpoint not found: {path}")
    return parse_checkpoint(path.read_bytes())[0]
