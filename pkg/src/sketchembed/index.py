"""Exact L2 retrieval over stored photo embeddings.

Sketch queries live at half the scale of photo features, so ``query``
multiplies the query vector by ``scale`` (default 2.0) before measuring
distances. The on-disk format is little-endian throughout: magic ``SBIX``,
version u16, dim u16, count u64, then per entry a length-prefixed UTF-8
id, a length-prefixed UTF-8 category (length 0 when absent), and dim
float32 vector components.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SBIX"
FORMAT_VERSION = 1


class IndexFormatError(ValueError):
    """Raised when an index file is malformed."""


class EmbeddingIndex:
    def __init__(self, dim: int):
        if dim < 1 or dim > 0xFFFF:
            raise ValueError(f"dim must be in [1, 65535], got {dim}")
        self.dim = int(dim)
        self._ids = []
        self._categories = {}
        self._vectors = []
        self._matrix = None
        self._id_set = set()
        self._snapshotted = False

    def __len__(self):
        return len(self._ids)

    @property
    def snapshotted(self) -> bool:
        return self._snapshotted

    def add(self, entry_id: str, vector, category: str = None):
        if self._snapshotted:
            raise ValueError("index is snapshotted; no further adds")
        if not entry_id:
            raise ValueError("entry id must be non-empty")
        if entry_id in self._id_set:
            raise ValueError(f"duplicate entry id {entry_id!r}")
        vec = np.asarray(vector, dtype=np.float32).reshape(-1)
        if vec.shape[0] != self.dim:
            raise ValueError(f"vector for {entry_id!r} has length "
                             f"{vec.shape[0]}, index dim is {self.dim}")
        if not np.isfinite(vec).all():
            raise ValueError(f"vector for {entry_id!r} has non-finite "
                             f"components")
        self._ids.append(entry_id)
        self._id_set.add(entry_id)
        self._vectors.append(vec)
        if category is not None:
            self._categories[entry_id] = category

    def snapshot(self) -> "EmbeddingIndex":
        """Freeze the index; queries are only answered after this."""
        if not self._snapshotted:
            if not self._ids:
                raise ValueError("cannot snapshot an empty index")
            self._matrix = np.vstack(self._vectors)
            self._id_array = np.array(self._ids)
            self._snapshotted = True
        return self

    def ids(self):
        return list(self._ids)

    def category(self, entry_id: str):
        if entry_id not in self._id_set:
            raise KeyError(f"no entry with id {entry_id!r}")
        return self._categories.get(entry_id)

    def vector(self, entry_id: str) -> np.ndarray:
        try:
            pos = self._ids.index(entry_id)
        except ValueError:
            raise KeyError(f"no entry with id {entry_id!r}") from None
        return self._vectors[pos].copy()

    def query(self, sketch_embedding, k: int, scale: float = 2.0) -> list:
        """Top-k nearest entries to scale*query, ties broken by id."""
        if not self._snapshotted:
            raise ValueError("query requires a snapshot; call snapshot() "
                             "after the last add")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        q = np.asarray(sketch_embedding, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dim:
            raise ValueError(f"query has length {q.shape[0]}, index dim is "
                             f"{self.dim}")
        diff = self._matrix.astype(np.float64) - scale * q
        dist = np.sqrt((diff * diff).sum(axis=1))
        order = np.lexsort((self._id_array, dist))
        top = order[:min(k, len(order))]
        return [(self._ids[i], float(dist[i])) for i in top]

    def save(self, path):
        if not self._snapshotted:
            raise ValueError("save requires a snapshot")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = bytearray()
        blob += MAGIC
        blob += struct.pack("<HHQ", FORMAT_VERSION, self.dim,
                            len(self._ids))
        for entry_id, vec in zip(self._ids, self._vectors):
            id_bytes = entry_id.encode("utf-8")
            cat = self._categories.get(entry_id)
            cat_bytes = cat.encode("utf-8") if cat is not None else b""
            if len(id_bytes) > 0xFFFF or len(cat_bytes) > 0xFFFF:
                raise ValueError(f"id or category of {entry_id!r} exceeds "
                                 f"65535 bytes encoded")
            blob += struct.pack("<H", len(id_bytes)) + id_bytes
            blob += struct.pack("<H", len(cat_bytes)) + cat_bytes
            blob += vec.astype("<f4").tobytes()
        with open(path, "wb") as fh:
            fh.write(blob)

    @classmethod
    def load(cls, path) -> "EmbeddingIndex":
        path = Path(path)
        data = path.read_bytes()
        pos = 0

        def take(n, what):
            nonlocal pos
            if pos + n > len(data):
                raise IndexFormatError(
                    f"{path}: truncated while reading {what} at offset "
                    f"{pos} (need {n} bytes, have {len(data) - pos})")
            chunk = data[pos:pos + n]
            pos += n
            return chunk

        if take(4, "magic") != MAGIC:
            raise IndexFormatError(f"{path}: bad magic at offset 0, "
                                   f"expected {MAGIC!r}")
        version, dim, count = struct.unpack("<HHQ", take(12, "header"))
        if version != FORMAT_VERSION:
            raise IndexFormatError(f"{path}: unsupported version {version}")
        index = cls(dim)
        for i in range(count):
            (id_len,) = struct.unpack("<H", take(2, f"id length of entry "
                                                    f"{i}"))
            entry_id = take(id_len, f"id of entry {i}").decode("utf-8")
            (cat_len,) = struct.unpack(
                "<H", take(2, f"category length of entry {i}"))
            cat = (take(cat_len, f"category of entry {i}").decode("utf-8")
                   if cat_len else None)
            vec = np.frombuffer(take(4 * dim, f"vector of {entry_id!r}"),
                                dtype="<f4")
            index.add(entry_id, vec, cat)
        if pos != len(data):
            raise IndexFormatError(f"{path}: {len(data) - pos} trailing "
                                   f"bytes at offset {pos}")
        return index.snapshot()


def saved_size(ids, dim: int, categories=None) -> int:
    """Exact byte size of the saved file, for auditing."""
    categories = categories or {}
    total = 4 + 12
    for entry_id in ids:
        cat = categories.get(entry_id) or ""
        total += 2 + len(entry_id.encode("utf-8"))
        total += 2 + len(cat.encode("utf-8"))
        total += 4 * dim
    return total
