"""Binary named-tensor container.

Layout (all integers unsigned 64-bit little-endian)::

    b"PETCKPT1" | count
    per tensor: name_len | name (UTF-8) | rank | dims... | values (float64 LE)
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"PETCKPT1"


class CheckpointError(ValueError):
    pass


def _as_array(t) -> np.ndarray:
    return np.asarray(getattr(t, "data", t), dtype=np.float64)


def dumps(tensors: Mapping[str, object]) -> bytes:
    parts = [MAGIC, struct.pack("<Q", len(tensors))]
    for name, t in tensors.items():
        arr = _as_array(t)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<Q", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<Q", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:8] != MAGIC:
        raise CheckpointError("bad magic; not a PETCKPT1 file")
    pos = 8

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError("truncated checkpoint")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<Q", take(8))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<Q", take(8))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank)) if rank else ()
        n = int(np.prod(dims)) if dims else 1
        vals = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64)
        out[name] = vals.reshape(dims)
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after last tensor")
    return out


def save(path: str | os.PathLike, tensors: Mapping[str, object]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(tensors))


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
