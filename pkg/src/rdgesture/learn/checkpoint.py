"""Versioned model checkpoints.

Layout (little-endian)::

    b"RDGCKPT\\0" | u32 version | u32 spec-json length | spec json (utf-8) |
    u64 parameter count | u32 crc32(parameter bytes) | f32[count]
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .model import CnnGru, CnnGruSpec

MAGIC = b"RDGCKPT\0"
VERSION = 1


def save_checkpoint(model: CnnGru, path) -> None:
    spec = json.dumps(model.spec.to_dict(), sort_keys=True).encode()
    payload = np.ascontiguousarray(model.params, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(spec)))
        fh.write(spec)
        fh.write(struct.pack("<QI", model.params.size, zlib.crc32(payload)))
        fh.write(payload)


def load_checkpoint(path) -> CnnGru:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError("not a model checkpoint")
    version, spec_len = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 16 + spec_len
    spec = CnnGruSpec.from_dict(json.loads(data[16:off]))
    count, crc = struct.unpack_from("<QI", data, off)
    off += 12
    payload = data[off:]
    if len(payload) != 4 * count:
        raise ValueError("checkpoint truncated or padded")
    if zlib.crc32(payload) != crc:
        raise ValueError("checkpoint checksum mismatch")
    params = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    return CnnGru(spec, params)
