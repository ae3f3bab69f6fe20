from __future__ import annotations

import numpy as np

from retroknn.config import IndexConfig
from retroknn.errors import QueryError

from .flat import FlatIndex, build_flat, flat_search, top_k
from .io import Index, load_index, read_index, save_index
from .ivfpq import IvfPqIndex, default_n_list, ivfpq_search, train_ivfpq
from .kmeans import kmeans, kmeans_pp

__all__ = [
    "FlatIndex",
    "Index",
    "IvfPqIndex",
    "build_flat",
    "default_n_list",
    "kmeans",
    "kmeans_pp",
    "load_index",
    "measure_recall",
    "read_index",
    "recall_target",
    "save_index",
    "search",
    "search_arrays",
    "top_k",
    "train_ivfpq",
]


def search_arrays(index: Index, query: np.ndarray, k: int, n_probe: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(ids, squared distances) of the k nearest entries, ascending; n_probe is ignored by flat indexes."""
    if k < 1:
        raise QueryError("k must be at least 1")
    if isinstance(index, FlatIndex):
        return flat_search(index, query, k)
    return ivfpq_search(index, query, k, n_probe)


def search(index: Index, query: np.ndarray, k: int, n_probe: int | None = None) -> list[tuple[int, float]]:
    ids, dist = search_arrays(index, query, k, n_probe)
    return [(int(i), float(d)) for i, d in zip(ids, dist)]


def measure_recall(index: Index, oracle: FlatIndex, queries: np.ndarray, k: int, n_probe: int | None = None) -> float:
    """Mean fraction of the exact k nearest ids that the approximate index also returns."""
    queries = np.atleast_2d(np.asarray(queries))
    if not len(queries):
        raise QueryError("recall needs at least one query")
    hits = 0
    total = 0
    for q in queries:
        exact, _ = search_arrays(oracle, q, k)
        approx, _ = search_arrays(index, q, k, n_probe)
        hits += len(np.intersect1d(exact, approx))
        total += len(exact)
    return hits / total if total else 1.0


def recall_target(index: Index, n_probe: int | None, cfg: IndexConfig) -> float:
    """Configured recall floor: the full target when every list is scanned, the partial one otherwise."""
    if isinstance(index, FlatIndex):
        return cfg.recall_target
    scanned = index.n_probe if n_probe is None else n_probe
    return cfg.recall_target if scanned >= index.n_list else cfg.partial_recall_target
