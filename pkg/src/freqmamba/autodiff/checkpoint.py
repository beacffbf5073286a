"""Binary checkpoint format for named float64 tensors.

Layout (all integers little-endian)::

    b"PCDK"  u32 version  u32 count
    count x { u32 name_len, utf-8 name, u32 rank, rank x u64 extent,
              prod(extents) x f64 payload }
    [ u32 text_len, utf-8 key-value text ]     # optional trailing config

Readers that only know the tensor block can stop after ``count`` records.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PCDK"
VERSION = 1

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError", "MAGIC", "VERSION"]


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict, config_text: str | None = None) -> None:
    """Write ``tensors`` (name -> array-like) and optional config text."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(getattr(value, "data", value), dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    if config_text is not None:
        raw = config_text.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict, str | None]:
    """Read a checkpoint; returns ``(name -> ndarray, config text or None)``."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a PCDK checkpoint (bad magic)")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape)) if rank else 1
        if pos + 8 * n > len(buf):
            raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    text = None
    if pos < len(buf):
        (tlen,) = take("<I")
        text = buf[pos:pos + tlen].decode("utf-8")
    return tensors, text
