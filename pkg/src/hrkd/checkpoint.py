"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic        8 bytes   b"HRKDCKPT"
    version      u32       currently 1
    digest       32 bytes  SHA-256 of the header bytes below
    header_len   u64
    header       UTF-8 JSON, keys sorted, no whitespace
    n_entries    u32
    entries      n_entries times:
        name_len u16, name (UTF-8), ndim u8, dims (u64 each),
        values   prod(dims) float64 values, row-major

The header carries the configuration needed to rebuild the model
(encoder shapes, vocabulary, domain names, run settings).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .exceptions import FormatError

MAGIC = b"HRKDCKPT"
VERSION = 1


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def config_digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj)).hexdigest()


def dumps(header: dict, arrays: Dict[str, np.ndarray]) -> bytes:
    head = canonical_json(header)
    parts = [MAGIC, struct.pack("<I", VERSION), hashlib.sha256(head).digest(), struct.pack("<Q", len(head)), head]
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.require(np.asarray(arr, dtype="<f8"), requirements="C")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> Tuple[dict, Dict[str, np.ndarray]]:
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("checkpoint is truncated")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(8)) != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    digest = bytes(take(32))
    (head_len,) = struct.unpack("<Q", take(8))
    head = bytes(take(head_len))
    if hashlib.sha256(head).digest() != digest:
        raise FormatError("checkpoint header digest mismatch")
    header = json.loads(head.decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(bytes(take(8 * n)), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(view):
        raise FormatError("trailing bytes after last checkpoint entry")
    return header, arrays


def save(path, header: dict, arrays: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(header, arrays))
    return path


def load(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
