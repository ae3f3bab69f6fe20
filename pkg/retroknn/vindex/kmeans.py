"""Seeded Lloyd k-means with k-means++ initialization."""
from __future__ import annotations

import logging

import numpy as np

LOG = logging.getLogger("retroknn.vindex")


def squared_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Pairwise squared L2 distances, shape (len(x), len(centers))."""
    d = (x * x).sum(axis=1)[:, None] - 2.0 * (x @ centers.T) + (centers * centers).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0.0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            # fewer distinct points than centers; duplicates are harmless
            nxt = int(rng.integers(n))
        chosen.append(nxt)
        closest = np.minimum(closest, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def kmeans(x: np.ndarray, k: int, iters: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Returns (centers (k, d), assignment (n,)). Empty clusters are re-seeded from the farthest point."""
    x = np.asarray(x, dtype=np.float64)
    if k < 1 or k > len(x):
        raise ValueError(f"cannot fit {k} centers to {len(x)} points")
    centers = kmeans_pp(x, k, rng)
    assign = np.zeros(len(x), dtype=np.int64)
    for it in range(iters):
        dist = squared_distances(x, centers)
        assign = dist.argmin(axis=1)
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, x)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if len(empty):
            spread = dist[np.arange(len(x)), assign].copy()
            for c in empty:
                far = int(spread.argmax())
                centers[c] = x[far]
                spread[far] = -1.0
            LOG.debug("k-means iteration %d: re-seeded %d empty clusters", it, len(empty))
    assign = squared_distances(x, centers).argmin(axis=1)
    return centers, assign
