"""Binary container for named float tensors.

Layout (all integers little-endian)::

    magic     8 bytes   b"NCDTENS\\x00"
    version   u32       currently 1
    meta_len  u32       length of the UTF-8 JSON metadata blob (may be 0)
    meta      bytes     JSON object, e.g. architecture hyperparameters
    count     u32       number of tensors
    repeated count times:
        name_len  u32
        name      bytes (UTF-8)
        width     u8    bytes per element, 4 (float32) or 8 (float64)
        rank      u32
        dims      rank x u64
        payload   prod(dims) x width bytes, little-endian IEEE floats, row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NCDTENS\x00"
VERSION = 1

_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class ContainerError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes]
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        width = 8 if arr.dtype == np.float64 else 4
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[width])
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<BI", width, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if buf[:8] != MAGIC:
        raise ContainerError("bad magic")
    pos = 8
    version, meta_len = struct.unpack_from("<II", buf, pos)
    pos += 8
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}")
    meta = json.loads(buf[pos:pos + meta_len].decode()) if meta_len else {}
    pos += meta_len
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + nlen].decode()
        pos += nlen
        width, rank = struct.unpack_from("<BI", buf, pos)
        pos += 5
        if width not in _DTYPES:
            raise ContainerError(f"bad element width {width} for {name}")
        dims = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        n = int(np.prod(dims)) if rank else 1
        nbytes = n * width
        if pos + nbytes > len(buf):
            raise ContainerError(f"truncated payload for {name}")
        arr = np.frombuffer(buf, dtype=_DTYPES[width], count=n, offset=pos).reshape(dims)
        out[name] = arr.astype(arr.dtype.newbyteorder("="))
        pos += nbytes
    return out, meta


def save(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
