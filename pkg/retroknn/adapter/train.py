from __future__ import annotations

import logging
import math
import time

import numpy as np

from retroknn.adapter.model import batch_loss_and_grads, context_loss
from retroknn.adapter.params import AdapterParams, init_adapter
from retroknn.backbone.params import BackboneParams
from retroknn.backbone.train import EpochStats
from retroknn.config import RunConfig, derive_rng
from retroknn.errors import TrainingError
from retroknn.graphio.dataset import Dataset
from retroknn.optim import Adam
from retroknn.retrieve.sites import SiteContext, prepare_dataset_sites
from retroknn.store import TemplateStore

LOG = logging.getLogger("retroknn.adapter")


def adapter_neighbors(k_neighbors: int, atom_store: TemplateStore, bond_store: TemplateStore) -> int:
    """K actually used: stores smaller than the configured K are used whole."""
    sizes = [len(s) for s in (atom_store, bond_store) if len(s)]
    return min([k_neighbors, *sizes])


def contexts_loss(contexts: list[SiteContext], params: AdapterParams) -> float:
    return float(np.mean([context_loss(ctx, params) for ctx in contexts]))


def train_adapter(val: Dataset, backbone: BackboneParams, atom_store: TemplateStore, bond_store: TemplateStore,
                  cfg: RunConfig, history: list[EpochStats] | None = None,
                  contexts: list[SiteContext] | None = None) -> AdapterParams:
    """Adam on the fused classification loss of ``val``; returns the lowest-loss parameters.

    The backbone and both stores stay frozen, so neighbor retrieval runs once
    up front. Pass ``contexts`` to reuse an earlier retrieval.
    """
    if not len(val):
        raise TrainingError("adapter training set is empty")
    acfg = cfg.adapter
    k = adapter_neighbors(cfg.retrieval.k_neighbors, atom_store, bond_store)
    if contexts is None:
        contexts = prepare_dataset_sites(val, backbone, atom_store, bond_store, k, cfg.index.n_probe)
    params = init_adapter(backbone.hidden, k, derive_rng(cfg.seed, "adapter-init"), acfg.init_temperature,
                          adapt_temperature=acfg.adapt_temperature, adapt_lambda=acfg.adapt_lambda,
                          fixed_temperature=acfg.fixed_temperature, fixed_lambda=acfg.fixed_lambda)
    rng = derive_rng(cfg.seed, "adapter-train")
    opt = Adam(lr=acfg.lr)

    best = params.copy()
    best_loss = contexts_loss(contexts, params)
    best_epoch = 0
    if history is not None:
        history.append(EpochStats(0, best_loss, best_loss, 0.0))
    LOG.info("Training adapter: %d records, K=%d, adaptive T=%s, adaptive lambda=%s, initial loss %.4f",
             len(contexts), k, acfg.adapt_temperature, acfg.adapt_lambda, best_loss)

    for epoch in range(1, acfg.epochs + 1):
        start = time.monotonic()
        order = rng.permutation(len(contexts))
        batch_losses = []
        for lo in range(0, len(order), acfg.batch_size):
            batch = [contexts[int(i)] for i in order[lo:lo + acfg.batch_size]]
            loss, grads = batch_loss_and_grads(batch, params)
            if not math.isfinite(loss):
                raise TrainingError("adapter loss diverged to a non-finite value", epoch)
            opt.step(params.tensors, grads, frozen=params.frozen)
            batch_losses.append(loss)
        if not params.is_finite():
            raise TrainingError("adapter parameters became non-finite", epoch)

        val_loss = contexts_loss(contexts, params)
        if not math.isfinite(val_loss):
            raise TrainingError("adapter validation loss is not finite", epoch)
        elapsed = time.monotonic() - start
        if history is not None:
            history.append(EpochStats(epoch, float(np.mean(batch_losses)), val_loss, elapsed))
        if val_loss < best_loss:
            best, best_loss, best_epoch = params.copy(), val_loss, epoch
        LOG.info("Adapter epoch %d: loss %.4f (best %.4f @ %d), %.1fs", epoch, val_loss, best_loss, best_epoch, elapsed)
    return best
