"""CVRP: a flat little-endian container of named 32-bit tensors.

Layout::

    "CVRP" | version u32 = 1 | tensor_count u32
    per tensor: name_len u32 | name (UTF-8) | rank u32 | rank x u32 dims | 4-byte values

Values are IEEE-754 float32, except tensors whose payload is integer
metadata; those are written as raw uint32 words in the same 4-byte slots.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import FormatError

MAGIC = b"CVRP"
VERSION = 1


def encode(tensors: Iterable[tuple[str, np.ndarray]]) -> bytes:
    items = list(tensors)
    parts = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, arr in items:
        arr = np.asarray(arr)
        if arr.dtype == np.uint32:
            payload = arr.astype("<u4").tobytes()
        else:
            payload = arr.astype("<f4").tobytes()
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(payload)
    return b"".join(parts)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    """Parse a container into ``name -> float32 array`` in file order.

    Integer payloads come back as float32 bit patterns; use
    ``arr.view(np.uint32)`` to recover them.
    """
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("bad magic, expected b'CVRP'", 0)
    if len(buf) < 12:
        raise FormatError("truncated header", len(buf))
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    out: dict[str, np.ndarray] = {}
    off = 12
    for i in range(count):
        start = off
        if off + 4 > len(buf):
            raise FormatError(f"truncated tensor {i} name length", off)
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        if off + n > len(buf):
            raise FormatError(f"truncated tensor {i} name", off)
        try:
            name = buf[off:off + n].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"tensor {i} name is not valid UTF-8", off) from None
        off += n
        if off + 4 > len(buf):
            raise FormatError(f"truncated rank of {name!r}", off)
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        if rank > 3:
            raise FormatError(f"tensor {name!r} has rank {rank} > 3", off - 4)
        if off + 4 * rank > len(buf):
            raise FormatError(f"truncated dims of {name!r}", off)
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        if off + 4 * size > len(buf):
            raise FormatError(f"truncated data of {name!r}: need {size} values", off)
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}", start)
        out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(dims).copy()
        off += 4 * size
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes", off)
    return out


def write(path: str | Path, tensors: Iterable[tuple[str, np.ndarray]]) -> bytes:
    data = encode(tensors)
    Path(path).write_bytes(data)
    return data


def read(path: str | Path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
