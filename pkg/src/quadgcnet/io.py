"""Versioned binary container shared by datasets, networks and trajectories.

Layout::

    8 bytes   magic  b"QGCNBIN\\0"
    4 bytes   format version (uint32, little endian)
    8 bytes   header length in bytes (uint64)
    header    UTF-8 JSON: {"kind", "meta", "arrays": [{name, dtype, shape, offset}]}
    payload   raw little-endian arrays, each starting on an 8-byte boundary

The header is serialized with sorted keys and no whitespace variation so
that identical content always yields identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"QGCNBIN\0"
VERSION = 1


class ContainerError(ValueError):
    """File is not a readable container of the expected kind."""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def write_container(path, kind: str, arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset})
        pad = (-len(raw)) % 8
        blobs.append(raw + b"\0" * pad)
        offset += len(raw) + pad
    header = dumps_json({"kind": kind, "meta": meta or {}, "arrays": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        fh.write(b"\0" * ((-len(header)) % 8))
        for b in blobs:
            fh.write(b)


def read_container(path, kind: str | None = None):
    """Return (arrays, meta) of a container file; checks the kind if given."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ContainerError(f"{path}: not a quadgcnet container")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    header = json.loads(data[20:20 + hlen].decode())
    if kind is not None and header["kind"] != kind:
        raise ContainerError(f"{path}: expected a {kind!r} container, found {header['kind']!r}")
    base = 20 + hlen + ((-hlen) % 8)
    arrays = {}
    for e in header["arrays"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        arrays[e["name"]] = np.frombuffer(data, dtype=dt, count=count, offset=start).reshape(e["shape"]).copy()
    return arrays, header["meta"]


def sha256_of(obj) -> str:
    return hashlib.sha256(dumps_json(obj).encode()).hexdigest()
