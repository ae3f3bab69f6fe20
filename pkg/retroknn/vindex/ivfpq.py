"""
Inverted-file index with product-quantized residuals.

Vectors are routed to their nearest coarse centroid; the residual to that
centroid is split into ``m`` sub-vectors, each encoded as one byte by its own
codebook. A query scans the ``n_probe`` nearest lists and scores each entry by
asymmetric distance computation: exact query residual against the
reconstructed entry residual, summed over sub-spaces from lookup tables.
With ``refine > 0`` the index also keeps the f32 vectors, and the best
``refine * k`` coded candidates are re-scored exactly before the final cut.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from retroknn.errors import ConfigurationError, QueryError, TrainingError
from retroknn.vindex.flat import top_k
from retroknn.vindex.kmeans import kmeans, squared_distances

LOG = logging.getLogger("retroknn.vindex")

MAX_CODEBOOK = 256


def default_n_list(n: int) -> int:
    return max(1, math.floor(math.sqrt(n)))


@dataclass(frozen=True)
class IvfPqIndex:
    coarse_centroids: np.ndarray
    codebooks: np.ndarray
    codes: np.ndarray
    list_of: np.ndarray
    ids: np.ndarray
    n_probe: int = 32
    refine: int = 0
    vectors: np.ndarray | None = field(default=None, compare=False)
    inverted_lists: tuple[np.ndarray, ...] = field(default=(), compare=False)

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.coarse_centroids.shape[1]

    @property
    def n_list(self) -> int:
        return len(self.coarse_centroids)

    @property
    def m(self) -> int:
        return self.codebooks.shape[0]

    @property
    def dsub(self) -> int:
        return self.codebooks.shape[2]

    def reconstruct(self, positions: np.ndarray | None = None) -> np.ndarray:
        pos = np.arange(self.size) if positions is None else np.asarray(positions)
        parts = [self.codebooks[j][self.codes[pos, j]].astype(np.float64) for j in range(self.m)]
        residual = np.hstack(parts) if parts else np.zeros((len(pos), 0))
        return self.coarse_centroids[self.list_of[pos]].astype(np.float64) + residual


def assemble_ivfpq(coarse: np.ndarray, codebooks: np.ndarray, codes: np.ndarray, list_of: np.ndarray,
                   ids: np.ndarray, n_probe: int, refine: int = 0,
                   vectors: np.ndarray | None = None) -> IvfPqIndex:
    if refine and vectors is None:
        raise ConfigurationError("exact re-ranking needs the raw vectors")
    lists = tuple(np.flatnonzero(list_of == c) for c in range(len(coarse)))
    kept = np.asarray(vectors, dtype=np.float32) if refine else None
    return IvfPqIndex(coarse.astype(np.float32), codebooks.astype(np.float32), codes.astype(np.uint8),
                      list_of.astype(np.int64), ids.astype(np.int64), int(n_probe), int(refine), kept, lists)


def train_ivfpq(vectors: np.ndarray, n_list: int, m: int, kmeans_iters: int, seed: int,
                ids: np.ndarray | None = None, n_probe: int = 32, refine: int = 0) -> IvfPqIndex:
    x32 = np.asarray(vectors, dtype=np.float32)
    if x32.ndim != 2:
        raise ConfigurationError("vectors must be an (N, H) matrix")
    n, dim = x32.shape
    if m < 1 or dim % m:
        raise ConfigurationError(f"dimension {dim} is not divisible by m={m}")
    if refine < 0:
        raise ConfigurationError(f"refine must be non-negative, got {refine}")
    if n_list < 1 or n < n_list:
        raise TrainingError(f"cannot train {n_list} inverted lists from {n} vectors")
    if n < MAX_CODEBOOK:
        LOG.warning("Only %d vectors for product-quantizer training; codebooks shrink to %d entries", n, n)
    ids_arr = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    if len(ids_arr) != n:
        raise ConfigurationError(f"{n} vectors but {len(ids_arr)} ids")

    rng = np.random.default_rng(seed)
    x = x32.astype(np.float64)
    LOG.info("Training IVF-PQ: N=%d H=%d n_list=%d m=%d", n, dim, n_list, m)
    coarse, _ = kmeans(x, n_list, kmeans_iters, rng)
    coarse = coarse.astype(np.float32).astype(np.float64)
    list_of = squared_distances(x, coarse).argmin(axis=1)
    residual = x - coarse[list_of]

    dsub = dim // m
    ksub = min(MAX_CODEBOOK, n)
    codebooks = np.zeros((m, ksub, dsub))
    codes = np.zeros((n, m), dtype=np.uint8)
    for j in range(m):
        sub = residual[:, j * dsub:(j + 1) * dsub]
        book, _ = kmeans(sub, ksub, kmeans_iters, rng)
        book = book.astype(np.float32).astype(np.float64)
        codebooks[j] = book
        codes[:, j] = squared_distances(sub, book).argmin(axis=1)
    LOG.info("IVF-PQ trained; %d non-empty lists", int(np.count_nonzero(np.bincount(list_of, minlength=n_list))))
    return assemble_ivfpq(coarse, codebooks, codes, list_of, ids_arr, n_probe, refine, x32)


def nearest_lists(index: IvfPqIndex, q: np.ndarray, n_probe: int) -> np.ndarray:
    coarse = index.coarse_centroids.astype(np.float64)
    dist = ((coarse - q) ** 2).sum(axis=1)
    return np.lexsort((np.arange(index.n_list), dist))[:n_probe]


def ivfpq_search(index: IvfPqIndex, query: np.ndarray, k: int, n_probe: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    if index.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    q = np.asarray(query, dtype=np.float32).astype(np.float64)
    if q.shape != (index.dim,):
        raise QueryError(f"query has shape {q.shape}, index dimension is {index.dim}")
    n_probe = index.n_probe if n_probe is None else n_probe
    if n_probe < 1:
        raise QueryError("n_probe must be at least 1")

    scanned = nearest_lists(index, q, n_probe)
    lists = [index.inverted_lists[c] for c in scanned]
    pos = np.concatenate(lists)
    if not len(pos):
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    which = np.repeat(np.arange(len(scanned)), [len(x) for x in lists])

    # one (m, ksub) lookup table per scanned list: |r - b|^2 = |r|^2 - 2 r.b + |b|^2
    books = index.codebooks.astype(np.float64)
    r = (q - index.coarse_centroids[scanned].astype(np.float64)).reshape(len(scanned), index.m, index.dsub)
    tables = ((r * r).sum(axis=2)[:, :, None]
              - 2.0 * np.einsum("pmd,mkd->pmk", r, books)
              + (books * books).sum(axis=2)[None, :, :])
    dist = tables[which[:, None], np.arange(index.m)[None, :], index.codes[pos]].sum(axis=1)
    if not index.refine:
        return top_k(index.ids[pos], np.maximum(dist, 0.0), k)
    shortlist, _ = top_k(pos, dist, k * index.refine)
    exact = ((index.vectors[shortlist].astype(np.float64) - q) ** 2).sum(axis=1)
    return top_k(index.ids[shortlist], exact, k)
