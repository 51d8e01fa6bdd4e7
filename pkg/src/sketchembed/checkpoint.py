"""Binary parameter checkpoints.

Layout: the 4-byte magic ``SBF1``, then one record per tensor in the order
given at save time. Each record is

* name length, unsigned 16-bit little-endian
* name bytes (UTF-8)
* rank, unsigned 8-bit
* one unsigned 64-bit little-endian extent per axis
* the values as 32-bit little-endian IEEE-754, row-major

Values are stored at 32 bits regardless of the in-memory dtype, which is
lossless for the float32 parameters the models actually use.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SBF1"
_MAX_NAME = 0xFFFF
_MAX_RANK = 0xFF


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint file does not parse; carries a byte offset."""


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write named arrays to ``path``; iteration order becomes file order."""
    records = []
    seen = set()
    for name, arr in tensors.items():
        if not name:
            raise ValueError("checkpoint tensor names must be non-empty")
        if name in seen:
            raise ValueError(f"duplicate tensor name {name!r}")
        seen.add(name)
        encoded = name.encode("utf-8")
        if len(encoded) > _MAX_NAME:
            raise ValueError(f"tensor name {name!r} exceeds {_MAX_NAME} bytes")
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim > _MAX_RANK:
            raise ValueError(f"tensor {name!r} rank {arr.ndim} exceeds {_MAX_RANK}")
        header = struct.pack("<H", len(encoded)) + encoded
        header += struct.pack("<B", arr.ndim)
        header += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
        records.append(header + arr.astype("<f4").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MAGIC + b"".join(records))


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    """Read a checkpoint back as an ordered name -> float32 array mapping."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(
            f"{path}: bad magic {blob[:4]!r} at offset 0, expected {MAGIC!r}")
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    pos = 4

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointFormatError(
                f"{path}: truncated while reading {what} at offset {pos} "
                f"(need {n} bytes, have {len(blob) - pos})")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        if name in out:
            raise CheckpointFormatError(
                f"{path}: duplicate tensor name {name!r} at offset {pos}")
        (rank,) = struct.unpack("<B", take(1, f"rank of {name!r}"))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, f"extents of {name!r}")) \
            if rank else ()
        count = 1
        for extent in shape:
            count *= extent
        raw = take(4 * count, f"values of {name!r}")
        out[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(
            np.float32, copy=True)
    return out
