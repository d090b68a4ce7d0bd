"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SSMT"  u32 version=1  u32 count
    count × ( u16 name_len  name(utf-8)  u8 rank  rank × u32 dim  f32 data )
    u64 FNV-1a of every preceding byte

Tensors are written in sorted name order so identical state always yields
identical bytes. Non-tensor metadata (model config, run counters) travels as
f32 tensors under reserved ``__*__`` names.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import CorruptCheckpointError, FormatError

MAGIC = b"SSMT"
VERSION = 1
CONFIG_KEY = "__config__"
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash.

    Vectorised over 8-byte blocks is not possible (each step depends on the
    previous), so this walks the bytes; checkpoints here are well under a MB.
    """
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise FormatError(f"tensor {name} has rank {arr.ndim} > 255")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 4 + 8 + 8 or blob[:4] != MAGIC:
        raise CorruptCheckpointError("not an SSMT checkpoint (bad magic or too short)")
    body, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    if fnv1a64(body) != stored:
        raise CorruptCheckpointError("checkpoint checksum mismatch")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CorruptCheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            nbytes = 4 * int(np.prod(shape, dtype=np.int64))
            if pos + nbytes > len(body):
                raise CorruptCheckpointError(f"tensor {name} truncated")
            out[name] = np.frombuffer(body, dtype="<f4", count=nbytes // 4, offset=pos) \
                .astype(np.float32).reshape(shape)
            pos += nbytes
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptCheckpointError(f"malformed checkpoint: {exc}") from exc
    if pos != len(body):
        raise CorruptCheckpointError(f"{len(body) - pos} trailing bytes after {count} tensors")
    return out


def save(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    blob = encode(tensors)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def pack_json(obj) -> np.ndarray:
    """JSON document as an f32 vector of UTF-8 byte values."""
    raw = json.dumps(obj, sort_keys=True).encode("utf-8")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.float32)


def unpack_json(arr: np.ndarray):
    return json.loads(bytes(np.asarray(arr, dtype=np.float32).astype(np.uint8).tolist()).decode("utf-8"))
