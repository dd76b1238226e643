"""Versioned binary weight container.

Layout::

    b"ABMGDN\\0W"  magic (8 bytes)
    uint32 LE     format version
    uint64 LE     header length in bytes
    header        UTF-8 JSON: {"meta": ..., "tensors": [{name, shape, offset, count}]}
    payload       float64 little-endian, row-major, concatenated in header order

No timestamps are written, so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ABMGDN\0W"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": a.size})
        chunks.append(a.tobytes())
        offset += a.size
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True,
                        separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(chunks)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not an abmgdn checkpoint")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[20:20 + hlen])
    payload = np.frombuffer(blob, dtype="<f8", offset=20 + hlen)
    arrays = {}
    for e in header["tensors"]:
        flat = payload[e["offset"]:e["offset"] + e["count"]]
        arrays[e["name"]] = flat.reshape(e["shape"]).astype(np.float64)
    return arrays, header["meta"]


def save(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(arrays, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
