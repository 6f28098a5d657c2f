"""Checkpoint container.

Layout: 8-byte magic ``PFEck01\\0``, little-endian u32 manifest length,
UTF-8 JSON manifest (``meta`` plus a ``tensors`` list of name/shape
entries in payload order), then the concatenated little-endian f32 data.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PFEck01\0"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = [{"name": k, "shape": list(np.shape(v))} for k, v in tensors.items()]
    manifest = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode()
    with open(Path(path), "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        for v in tensors.values():
            f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:7] != MAGIC[:7]:
        raise CheckpointError(f"{path}: not a checkpoint (magic {raw[:8]!r})")
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: unsupported checkpoint version {raw[:8]!r}")
    if len(raw) < 12:
        raise CheckpointError(f"{path}: truncated header")
    (mlen,) = struct.unpack_from("<I", raw, 8)
    try:
        manifest = json.loads(raw[12:12 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt manifest") from e
    offset = 12 + mlen
    tensors = {}
    for e in manifest["tensors"]:
        shape = tuple(e["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        if offset + 4 * count > len(raw):
            raise CheckpointError(f"{path}: truncated payload at {e['name']}")
        tensors[e["name"]] = np.frombuffer(raw, "<f4", count, offset).reshape(shape).astype(np.float32)
        offset += 4 * count
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return tensors, manifest["meta"]
