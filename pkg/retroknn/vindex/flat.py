from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from retroknn.errors import QueryError


@dataclass(frozen=True)
class FlatIndex:
    """Exact squared-L2 search over single-precision vectors."""

    vectors: np.ndarray
    ids: np.ndarray

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @cached_property
    def vectors64(self) -> np.ndarray:
        return self.vectors.astype(np.float64)


def build_flat(vectors: np.ndarray, ids: np.ndarray | list[int] | None = None) -> FlatIndex:
    vecs = np.asarray(vectors, dtype=np.float32)
    if vecs.ndim == 1 and vecs.size == 0:
        vecs = vecs.reshape(0, 0)
    if vecs.ndim != 2:
        raise ValueError("vectors must be an (N, H) matrix")
    ids_arr = np.arange(len(vecs), dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64).reshape(-1)
    if len(ids_arr) != len(vecs):
        raise ValueError(f"{len(vecs)} vectors but {len(ids_arr)} ids")
    if not np.all(np.isfinite(vecs)):
        raise ValueError("vectors must be finite")
    return FlatIndex(np.ascontiguousarray(vecs), ids_arr)


def top_k(ids: np.ndarray, dist: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k smallest distances, ties broken by ascending id."""
    order = np.lexsort((ids, dist))[:k]
    return ids[order], dist[order]


def flat_search(index: FlatIndex, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    if index.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    q = np.asarray(query, dtype=np.float32).astype(np.float64)
    if q.shape != (index.dim,):
        raise QueryError(f"query has shape {q.shape}, index dimension is {index.dim}")
    dist = ((index.vectors64 - q) ** 2).sum(axis=1)
    return top_k(index.ids, dist, k)
