"""Binary checkpoint format shared by every trained artifact.

Layout (all integers little-endian)::

    b"RCMB"  u32 version  u32 n_tensors
    n_tensors * ( u16 name_len, name utf-8, u32 ndim, u64 dims[ndim],
                  float64-le data[prod(dims)] )
    u32 meta_len  meta utf-8 JSON (sorted keys)

Nothing may follow the metadata block.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"RCMB"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        return isinstance(other, Checkpoint) and to_bytes(self) == to_bytes(other)


def to_bytes(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        a = np.asarray(arr, dtype="<f8")
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
        out.append(np.ascontiguousarray(a).tobytes())
    meta = json.dumps(ckpt.metadata, sort_keys=True).encode()
    out.append(struct.pack("<I", len(meta)) + meta)
    return b"".join(out)


def from_bytes(buf: bytes) -> Checkpoint:
    view = memoryview(buf)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointFormatError("truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointFormatError("bad magic bytes")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode()
        (ndim,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(dims, dtype=np.uint64)) if ndim else 1
        data = np.frombuffer(bytes(take(8 * size)), dtype="<f8").astype(np.float64)
        tensors[name] = data.reshape(dims)
    (meta_len,) = struct.unpack("<I", take(4))
    try:
        metadata = json.loads(bytes(take(meta_len)).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"bad metadata block: {exc}") from exc
    if pos != len(view):
        raise CheckpointFormatError("trailing bytes after metadata")
    return Checkpoint(tensors, metadata)


def save(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
