from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from retroknn.backbone.params import BackboneParams
from retroknn.errors import ConfigurationError, EvaluationError
from retroknn.graphio.dataset import Dataset
from retroknn.retrieve.sites import FixedFusion, SiteContext, fused_loss, prepare_dataset_sites
from retroknn.store import TemplateStore

LOG = logging.getLogger("retroknn.harness")


@dataclass
class GridResult:
    temperature: float
    lam: float
    loss: float
    table: pd.DataFrame


def grid_search_fixed(val: Dataset, backbone: BackboneParams, atom_store: TemplateStore, bond_store: TemplateStore,
                      temperatures: list[float], lambdas: list[float], k_neighbors: int = 32,
                      n_probe: int | None = None, contexts: list[SiteContext] | None = None) -> GridResult:
    """Validation loss of every global (T, lambda) pair; the argmin prefers smaller T, then smaller lambda."""
    if not temperatures or not lambdas:
        raise ConfigurationError("grid search needs at least one temperature and one lambda")
    if contexts is None:
        contexts = prepare_dataset_sites(val, backbone, atom_store, bond_store, k_neighbors, n_probe)
    if not contexts:
        raise EvaluationError("grid search needs a nonempty validation set")
    rows = []
    for temperature in temperatures:
        for lam in lambdas:
            fusion = FixedFusion(float(temperature), float(lam))
            loss = float(np.mean([fused_loss(ctx, fusion) for ctx in contexts]))
            LOG.debug("Grid point T=%g lambda=%g: loss %.6f", temperature, lam, loss)
            rows.append({"temperature": float(temperature), "lambda": float(lam), "loss": loss})
    table = pd.DataFrame(rows)
    best = table.sort_values(["loss", "temperature", "lambda"], kind="mergesort").iloc[0]
    LOG.info("Best fixed fusion: T=%g lambda=%g (loss %.4f)", best["temperature"], best["lambda"], best["loss"])
    return GridResult(float(best["temperature"]), float(best["lambda"]), float(best["loss"]), table)
