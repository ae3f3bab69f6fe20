"""
Per-site retrieval context and fusion of classifier and neighbor distributions.

A ``SiteContext`` holds everything about one record that does not depend on
the fusion parameters: embeddings, classifier probabilities and the K nearest
store entries of every atom and bond. Fusion sources (fixed or adapter)
turn a context into per-site temperatures and interpolation factors.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from retroknn.backbone.model import EmbeddingSet, encode, head_probs
from retroknn.backbone.params import BackboneParams
from retroknn.errors import ConfigurationError, RetrievalError
from retroknn.graphio.dataset import Dataset, ReactionRecord
from retroknn.retrieve.knn import MAX_TEMPERATURE, MIN_TEMPERATURE, interpolate, knn_distributions
from retroknn.store import TemplateStore
from retroknn.vindex import IvfPqIndex, search_arrays

LOG = logging.getLogger("retroknn.retrieve")


@dataclass
class SiteContext:
    record: ReactionRecord
    emb: EmbeddingSet
    gnn_atom: np.ndarray
    gnn_bond: np.ndarray
    atom_templates: np.ndarray
    atom_distances: np.ndarray
    bond_templates: np.ndarray
    bond_distances: np.ndarray

    @property
    def k_neighbors(self) -> int:
        return self.atom_distances.shape[1]


@dataclass
class SiteParameters:
    atom_temperature: np.ndarray
    atom_lambda: np.ndarray
    bond_temperature: np.ndarray
    bond_lambda: np.ndarray


class Fusion(Protocol):
    def site_parameters(self, ctx: SiteContext) -> SiteParameters:
        ...

    def neighbors(self, default: int) -> int:
        """Neighbor count this fusion consumes; ``default`` when it accepts any."""
        ...


@dataclass(frozen=True)
class FixedFusion:
    """One global (T, lambda) pair for every site."""

    temperature: float
    lam: float

    def __post_init__(self) -> None:
        if not MIN_TEMPERATURE <= self.temperature <= MAX_TEMPERATURE:
            raise ConfigurationError(f"temperature {self.temperature} outside [1, 100]")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lambda {self.lam} outside [0, 1]")

    def site_parameters(self, ctx: SiteContext) -> SiteParameters:
        n, m = ctx.record.n_nodes, ctx.record.n_edges
        return SiteParameters(np.full(n, float(self.temperature)), np.full(n, float(self.lam)),
                              np.full(m, float(self.temperature)), np.full(m, float(self.lam)))

    def neighbors(self, default: int) -> int:
        return default


def retrieve_neighbors(store: TemplateStore, queries: np.ndarray, k: int,
                       n_probe: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(templates, distances), each (len(queries), min(k, |store|)), rows ascending by distance."""
    if not len(store):
        if len(queries):
            raise RetrievalError(f"{store.kind} store is empty")
        return np.zeros((0, 0), dtype=np.int64), np.zeros((0, 0))
    k_eff = min(k, len(store))
    if k_eff < k:
        LOG.debug("%s store holds %d entries; using all of them instead of %d", store.kind, len(store), k)
    templates = np.zeros((len(queries), k_eff), dtype=np.int64)
    distances = np.zeros((len(queries), k_eff))
    for row, q in enumerate(queries):
        ids, dist = search_arrays(store.index, q, k_eff, n_probe)
        if len(ids) < k_eff and isinstance(store.index, IvfPqIndex):
            ids, dist = search_arrays(store.index, q, k_eff, store.index.n_list)
        templates[row] = store.values[ids]
        distances[row] = dist
    return templates, distances


def _check_stores(p: BackboneParams, atom_store: TemplateStore, bond_store: TemplateStore) -> None:
    for store, n_templates in ((atom_store, p.n_atom_templates), (bond_store, p.n_bond_templates)):
        if len(store) and store.dim != p.hidden:
            raise ConfigurationError(f"{store.kind} store keys have dimension {store.dim}, backbone hidden size is {p.hidden}")
        if len(store) and store.values.max() > n_templates:
            raise ConfigurationError(f"{store.kind} store holds template ids above {n_templates}")


def prepare_sites(g: ReactionRecord, p: BackboneParams, atom_store: TemplateStore, bond_store: TemplateStore,
                  k_neighbors: int, n_probe: int | None = None) -> SiteContext:
    _check_stores(p, atom_store, bond_store)
    emb = encode(g, p)
    gnn_atom, gnn_bond = head_probs(emb, p)
    atom_t, atom_d = retrieve_neighbors(atom_store, emb.node_embeddings, k_neighbors, n_probe)
    bond_t, bond_d = retrieve_neighbors(bond_store, emb.edge_embeddings, k_neighbors, n_probe)
    return SiteContext(g, emb, gnn_atom, gnn_bond, atom_t, atom_d, bond_t, bond_d)


def fuse(ctx: SiteContext, params: SiteParameters) -> tuple[np.ndarray, np.ndarray]:
    """Fused atom and bond distributions, shapes (n, |T_A|+1) and (m, |T_B|+1)."""
    knn_atom, _ = knn_distributions(ctx.atom_templates, ctx.atom_distances, params.atom_temperature,
                                    ctx.gnn_atom.shape[1])
    knn_bond, _ = knn_distributions(ctx.bond_templates, ctx.bond_distances, params.bond_temperature,
                                    ctx.gnn_bond.shape[1])
    return (interpolate(ctx.gnn_atom, knn_atom, params.atom_lambda),
            interpolate(ctx.gnn_bond, knn_bond, params.bond_lambda))


def nll(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean negative log-probability of the targets; 0 for no sites."""
    if not len(targets):
        return 0.0
    picked = probs[np.arange(len(targets)), targets]
    return float(-np.log(np.maximum(picked, np.finfo(np.float64).tiny)).mean())


def fused_loss(ctx: SiteContext, fusion: Fusion) -> float:
    atom_p, bond_p = fuse(ctx, fusion.site_parameters(ctx))
    return nll(atom_p, ctx.record.atom_targets) + nll(bond_p, ctx.record.bond_targets)


def prepare_dataset_sites(d: Dataset, p: BackboneParams, atom_store: TemplateStore, bond_store: TemplateStore,
                          k_neighbors: int, n_probe: int | None = None) -> list[SiteContext]:
    """Contexts for every record; retrieval runs once and is reused across fusion settings."""
    LOG.info("Retrieving %d neighbors for every site of %d records", k_neighbors, len(d))
    return [prepare_sites(g, p, atom_store, bond_store, k_neighbors, n_probe) for g in d]
