"""FATB tensor blobs: magic, version, dtype code, rank, uint32 dims, little-endian payload."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FATB"
VERSION = 1
_DTYPES = {0: "i1", 1: "u1", 2: "<i2", 3: "<i4", 4: "<i8", 5: "<f4", 6: "<f8"}
_CODES = {np.dtype(v).str.lstrip("<>|="): k for k, v in _DTYPES.items()}


class BlobError(ValueError):
    pass


def dumps(a: np.ndarray) -> bytes:
    a = np.asarray(a)
    key = a.dtype.str.lstrip("<>|=")
    if key not in _CODES:
        raise BlobError(f"unsupported dtype {a.dtype}")
    code = _CODES[key]
    head = MAGIC + struct.pack("<BBB", VERSION, code, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a, dtype=np.dtype(_DTYPES[code])).tobytes()


def loads(blob: bytes) -> np.ndarray:
    if len(blob) < 7 or blob[:4] != MAGIC:
        raise BlobError("not a FATB blob")
    version, code, rank = struct.unpack_from("<BBB", blob, 4)
    if version != VERSION:
        raise BlobError(f"unsupported blob version {version}")
    if code not in _DTYPES:
        raise BlobError(f"unknown dtype code {code}")
    off = 7 + 4 * rank
    if len(blob) < off:
        raise BlobError("truncated blob header")
    dims = struct.unpack_from(f"<{rank}I", blob, 7)
    dt = np.dtype(_DTYPES[code])
    need = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(blob) - off != need:
        raise BlobError(f"payload is {len(blob) - off} bytes, expected {need}")
    return np.frombuffer(blob, dtype=dt, offset=off).reshape(dims).copy()


def save(path, a: np.ndarray) -> None:
    Path(path).write_bytes(dumps(a))


def load(path) -> np.ndarray:
    try:
        return loads(Path(path).read_bytes())
    except OSError as exc:
        raise BlobError(f"cannot read {path}: {exc}") from exc
