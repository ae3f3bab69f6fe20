from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from retroknn.backbone.model import loss_and_grads, record_loss
from retroknn.backbone.params import BackboneParams, init_backbone
from retroknn.config import RunConfig, derive_rng
from retroknn.errors import TrainingError
from retroknn.graphio.dataset import Dataset
from retroknn.optim import Adam

LOG = logging.getLogger("retroknn.backbone")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


def dataset_loss(d: Dataset, p: BackboneParams) -> float:
    if not len(d):
        return float("nan")
    return float(np.mean([record_loss(g, p) for g in d]))


def train_backbone(train: Dataset, val: Dataset, cfg: RunConfig,
                   history: list[EpochStats] | None = None) -> BackboneParams:
    """Adam with early stopping on validation loss; returns the best-epoch parameters."""
    if not len(train):
        raise TrainingError("training set is empty")
    bcfg, tcfg = cfg.backbone, cfg.train
    p = init_backbone(bcfg.n_layers, bcfg.hidden, train.node_vocab_size, train.edge_vocab_size,
                      train.n_atom_templates, train.n_bond_templates, derive_rng(cfg.seed, "backbone-init"))
    rng = derive_rng(cfg.seed, "backbone-train")
    opt = Adam(lr=tcfg.lr)
    monitor = val if len(val) else train
    if not len(val):
        LOG.warning("Validation set is empty; early stopping monitors the training loss")

    best = p.copy()
    best_loss = dataset_loss(monitor, p)
    best_epoch = 0
    stale = 0
    if history is not None:
        history.append(EpochStats(0, dataset_loss(train, p), best_loss, 0.0))
    LOG.info("Training backbone: %d records, L=%d H=%d, %d epochs max", len(train), p.n_layers, p.hidden, tcfg.epochs)

    for epoch in range(1, tcfg.epochs + 1):
        start = time.monotonic()
        order = rng.permutation(len(train))
        for lo in range(0, len(order), tcfg.batch_size):
            batch = [train[int(i)] for i in order[lo:lo + tcfg.batch_size]]
            loss, grads = loss_and_grads(batch, p, rng=rng, dropout=bcfg.dropout)
            if not math.isfinite(loss):
                raise TrainingError("loss diverged to a non-finite value", epoch)
            opt.step(p.tensors, grads)
        if not p.is_finite():
            raise TrainingError("parameters became non-finite", epoch)

        train_loss = dataset_loss(train, p)
        val_loss = dataset_loss(monitor, p)
        if not math.isfinite(val_loss):
            raise TrainingError("validation loss is not finite", epoch)
        elapsed = time.monotonic() - start
        if history is not None:
            history.append(EpochStats(epoch, train_loss, val_loss, elapsed))
        if val_loss < best_loss:
            best, best_loss, best_epoch, stale = p.copy(), val_loss, epoch, 0
        else:
            stale += 1
        LOG.info("Epoch %d: train %.4f, val %.4f (best %.4f @ %d), %.1fs",
                 epoch, train_loss, val_loss, best_loss, best_epoch, elapsed)
        if stale >= tcfg.patience:
            LOG.info("Early stop at epoch %d; no improvement for %d epochs", epoch, tcfg.patience)
            break
    return best
