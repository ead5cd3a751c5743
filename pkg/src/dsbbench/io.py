"""Self-describing binary containers: JSON header + raw little-endian arrays.

One format serves pair files (.dsbpair), test sets (.dsbset) and solver
checkpoints (.dsbckpt); the magic and a header `role` field tell them apart
so a fixed evaluation set can never be fed to training.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

PAIR_MAGIC = b"DSBPAIR1"
SET_MAGIC = b"DSBSET01"
CKPT_MAGIC = b"DSBCKPT1"

_DTYPES = {"<f8": np.dtype("<f8"), "<u2": np.dtype("<u2")}


class CorruptFileError(ValueError):
    """File is truncated, mangled, or of an unexpected kind/version."""


def write_container(path, magic: bytes, header: dict, arrays: dict[str, np.ndarray]) -> str:
    """Write header+arrays; returns the sha256 content hash of the file."""
    meta = []
    blobs = []
    for name, arr in arrays.items():
        dtype = "<u2" if arr.dtype.kind == "u" else "<f8"
        blob = np.ascontiguousarray(arr.astype(_DTYPES[dtype], copy=False)).tobytes()
        meta.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        blobs.append(blob)
    full = dict(header)
    full["schema_version"] = SCHEMA_VERSION
    full["arrays"] = meta
    head = json.dumps(full, sort_keys=True).encode("utf-8")
    payload = magic + struct.pack("<Q", len(head)) + head + b"".join(blobs)
    Path(path).write_bytes(payload)
    return hashlib.sha256(payload).hexdigest()


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray], str]:
    """Read and validate; returns (header, arrays, content hash)."""
    try:
        payload = Path(path).read_bytes()
    except OSError as e:
        raise CorruptFileError(f"cannot read {path}: {e}") from None
    if len(payload) < len(magic) + 8 or payload[:len(magic)] != magic:
        raise CorruptFileError(f"{path}: bad magic (expected {magic!r})")
    off = len(magic)
    (head_len,) = struct.unpack("<Q", payload[off:off + 8])
    off += 8
    if off + head_len > len(payload):
        raise CorruptFileError(f"{path}: truncated header")
    try:
        header = json.loads(payload[off:off + head_len])
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CorruptFileError(f"{path}: unreadable header: {e}") from None
    if header.get("schema_version") != SCHEMA_VERSION:
        raise CorruptFileError(f"{path}: schema version "
                               f"{header.get('schema_version')} != {SCHEMA_VERSION}")
    off += head_len
    arrays = {}
    for meta in header["arrays"]:
        dtype = _DTYPES[meta["dtype"]]
        count = int(np.prod(meta["shape"], dtype=np.int64)) if meta["shape"] else 1
        nbytes = count * dtype.itemsize
        if off + nbytes > len(payload):
            raise CorruptFileError(f"{path}: truncated array {meta['name']!r}")
        arr = np.frombuffer(payload[off:off + nbytes], dtype=dtype).reshape(meta["shape"])
        arrays[meta["name"]] = arr.astype(np.float64) if dtype.kind == "f" else arr.copy()
        off += nbytes
    if off != len(payload):
        raise CorruptFileError(f"{path}: {len(payload) - off} trailing bytes")
    return header, arrays, hashlib.sha256(payload).hexdigest()


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
