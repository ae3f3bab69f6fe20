"""
Neighbor-weighted template distributions and their interpolation with the
classifier output.

A neighbor at squared distance d carries weight exp(-d / T); the probability
of a template is the normalized weight of the neighbors holding it, token 0
included.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from retroknn.errors import RetrievalError

MIN_TEMPERATURE = 1.0
MAX_TEMPERATURE = 100.0


@dataclass(frozen=True)
class NeighborList:
    templates: np.ndarray
    distances: np.ndarray

    def __post_init__(self) -> None:
        if len(self.templates) != len(self.distances):
            raise RetrievalError("neighbor templates and distances differ in length")
        if len(self.distances):
            if not np.all(np.isfinite(self.distances)) or self.distances.min() < 0.0:
                raise RetrievalError("neighbor distances must be finite and non-negative")
            if np.any(np.diff(self.distances) < 0.0):
                raise RetrievalError("neighbor list is not sorted by distance")

    @classmethod
    def from_pairs(cls, pairs: list[tuple[int, float]]) -> NeighborList:
        pairs = sorted(pairs, key=lambda pair: pair[1])
        return cls(np.asarray([t for t, _ in pairs], dtype=np.int64),
                   np.asarray([d for _, d in pairs], dtype=np.float64))

    def __len__(self) -> int:
        return len(self.templates)


def knn_distribution(n: NeighborList, temperature: float, n_templates: int) -> np.ndarray:
    """Dense distribution over template ids 0..n_templates."""
    if not len(n):
        raise RetrievalError("cannot build a distribution from an empty neighbor list")
    if not MIN_TEMPERATURE <= temperature <= MAX_TEMPERATURE:
        raise RetrievalError(f"temperature {temperature} outside [{MIN_TEMPERATURE:g}, {MAX_TEMPERATURE:g}]")
    if n.templates.min() < 0 or n.templates.max() > n_templates:
        raise RetrievalError(f"neighbor template ids exceed 0..{n_templates}")
    probs, _ = knn_distributions(n.templates[None, :], n.distances[None, :],
                                 np.asarray([temperature], dtype=np.float64), n_templates + 1)
    return probs[0]


def knn_distributions(templates: np.ndarray, distances: np.ndarray, temperatures: np.ndarray,
                      n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise distributions for S sites with K neighbors each.

    Returns ``(probs (S, n_classes), weights (S, K))`` where ``weights`` are
    the normalized neighbor weights that sum to one per row.
    """
    n_sites = len(templates)
    if n_sites and templates.shape[1] == 0:
        raise RetrievalError("cannot build a distribution from an empty neighbor list")
    probs = np.zeros((n_sites, n_classes))
    if not n_sites:
        return probs, np.zeros(templates.shape)
    # shifting by the nearest distance leaves the ratios unchanged and keeps exp() from underflowing
    shifted = distances - distances.min(axis=1, keepdims=True)
    w = np.exp(-shifted / temperatures[:, None])
    weights = w / w.sum(axis=1, keepdims=True)
    rows = np.repeat(np.arange(n_sites), templates.shape[1])
    np.add.at(probs, (rows, templates.ravel()), weights.ravel())
    return probs, weights


def interpolate(p_gnn: np.ndarray, p_knn: np.ndarray, lam: float | np.ndarray) -> np.ndarray:
    """lam * p_gnn + (1 - lam) * p_knn; ``lam`` may hold one value per row."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim == 1 and np.ndim(p_gnn) == 2:
        lam = lam[:, None]
    return lam * p_gnn + (1.0 - lam) * p_knn
