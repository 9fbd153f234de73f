"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"MMCKPT1"
    u32 parameter count
    per parameter:
        u32 name length, name bytes (UTF-8)
        u32 rank, rank x u64 extents
        prod(extents) x f64 values, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from molmamba.errors import ValidationError

MAGIC = b"MMCKPT1"


def encode(params: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(params))]
    for name, value in params.items():
        array = np.asarray(value, dtype="<f8", order="C")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(array.tobytes(order="C"))
    return b"".join(parts)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if not blob.startswith(MAGIC):
        raise ValidationError("checkpoint: bad magic header")
    offset = len(MAGIC)

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise ValidationError("checkpoint: truncated file")
        values = struct.unpack_from(fmt, blob, offset)
        offset += size
        return values

    (count,) = take("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        if offset + name_len > len(blob):
            raise ValidationError("checkpoint: truncated parameter name")
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        if name in params:
            raise ValidationError(f"checkpoint: duplicate parameter {name!r}")
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape)) if rank else 1
        end = offset + 8 * n
        if end > len(blob):
            raise ValidationError(f"checkpoint: truncated data for {name!r}")
        params[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
        offset = end
    if offset != len(blob):
        raise ValidationError("checkpoint: trailing bytes after last parameter")
    return params


def save(path: str | Path, params: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(params))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
