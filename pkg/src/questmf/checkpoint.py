"""Checkpoint container for named parameter arrays plus training metadata.

Layout (little-endian)::

    bytes 0-3    magic b"QMFC"
    bytes 4-11   uint64 header length H
    H bytes      UTF-8 JSON header
    payload      float64 arrays, concatenated in header order

The header holds ``{"meta": {...}, "tensors": [{"name", "shape", "offset"}]}``
with offsets in bytes from the start of the payload. ``meta`` carries stage,
epoch, validation loss, validation CCC, seed, config hash and the
architecture needed to rebuild the model.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"QMFC"
_PREFIX = struct.Struct("<4sQ")


class CheckpointError(Exception):
    pass


def write_checkpoint(path, state: dict[str, np.ndarray], meta: dict) -> None:
    """Write atomically: the file appears complete or not at all."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    arrays = []
    for name, arr in state.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.nbytes
        arrays.append(a)
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, len(header)))
        fh.write(header)
        for a in arrays:
            fh.write(memoryview(a).cast("B"))
    os.replace(tmp, path)


def read_meta(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)["meta"]


def _read_header(fh, path) -> dict:
    prefix = fh.read(_PREFIX.size)
    if len(prefix) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, n = _PREFIX.unpack(prefix)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    try:
        return json.loads(fh.read(n))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns ``(state, meta)``; arrays are fresh writable float64 copies."""
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from exc
    with fh:
        header = _read_header(fh, path)
        payload = fh.read()
    state = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        end = t["offset"] + 8 * count
        if end > len(payload):
            raise CheckpointError(f"{path}: payload too short for {t['name']}")
        a = np.frombuffer(payload, dtype="<f8", count=count, offset=t["offset"])
        state[t["name"]] = a.reshape(t["shape"]).astype(np.float64)
    return state, header["meta"]
