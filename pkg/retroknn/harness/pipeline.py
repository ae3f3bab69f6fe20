"""Shared plumbing for experiments: backbone plus stores, and batched prediction."""
from __future__ import annotations

import logging
from dataclasses import dataclass

from retroknn.backbone.params import BackboneParams
from retroknn.backbone.train import EpochStats, train_backbone
from retroknn.config import RunConfig
from retroknn.graphio.dataset import Dataset
from retroknn.retrieve.ranking import RankedPrediction, rank_sites
from retroknn.retrieve.sites import Fusion, SiteContext, fuse, prepare_dataset_sites
from retroknn.store import TemplateStore, build_stores

LOG = logging.getLogger("retroknn.harness")


@dataclass
class Pipeline:
    backbone: BackboneParams
    atom_store: TemplateStore
    bond_store: TemplateStore

    def contexts(self, d: Dataset, k_neighbors: int, n_probe: int | None = None) -> list[SiteContext]:
        return prepare_dataset_sites(d, self.backbone, self.atom_store, self.bond_store, k_neighbors, n_probe)


def build_pipeline(train: Dataset, val: Dataset, cfg: RunConfig,
                   history: list[EpochStats] | None = None) -> Pipeline:
    backbone = train_backbone(train, val, cfg, history)
    atom_store, bond_store = build_stores(train, backbone, cfg.index, cfg.seed)
    return Pipeline(backbone, atom_store, bond_store)


def predict_contexts(contexts: list[SiteContext], fusion: Fusion, top_n: int = 50) -> list[RankedPrediction]:
    preds = []
    for ctx in contexts:
        atom_p, bond_p = fuse(ctx, fusion.site_parameters(ctx))
        preds.append(rank_sites(atom_p, bond_p, top_n))
    return preds


def gnn_predictions(contexts: list[SiteContext], top_n: int = 50) -> list[RankedPrediction]:
    return [rank_sites(ctx.gnn_atom, ctx.gnn_bond, top_n) for ctx in contexts]
