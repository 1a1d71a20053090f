"""Versioned binary container for named float64 tensors.

Layout::

    b"LYRMCKPT" | uint32 version | uint64 header length | JSON header | tensor data

The header is canonical JSON (sorted keys) listing every tensor's name, shape
and byte offset, plus free-form metadata. Tensor data is little-endian
float64 in C order. Nothing time- or host-dependent is written, so saving the
same tensors twice yields identical bytes.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"LYRMCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], metadata: dict | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"tensor {name!r} contains non-finite values")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        data = arr.tobytes()
        chunks.append(data)
        offset += len(data)
    header = json.dumps(
        {"version": VERSION, "metadata": metadata or {}, "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    header = json.loads(blob[start:start + header_len].decode("utf-8"))
    data = memoryview(blob)[start + header_len:]
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        begin = entry["offset"]
        end = begin + 8 * count
        if end > len(data):
            raise CheckpointError(f"tensor {entry['name']!r} runs past end of file")
        tensors[entry["name"]] = np.frombuffer(data[begin:end], dtype="<f8").astype(np.float64).reshape(shape)
    return tensors, header["metadata"]


def atomic_write_bytes(path: str | os.PathLike, blob: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, tensors: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    atomic_write_bytes(path, dumps(tensors, metadata))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
