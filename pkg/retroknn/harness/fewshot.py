"""
Zero-shot and few-shot experiments.

Training and validation data lose the held-out reaction classes entirely
(zero-shot) or keep only a fraction of them (few-shot). Each regime gets its
own backbone, stores and adapter; the untouched test set is then scored per
class for the classifier alone and for the adapter-fused system.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import pandas as pd

from retroknn.adapter.model import AdapterFusion
from retroknn.adapter.train import adapter_neighbors, train_adapter
from retroknn.config import RunConfig, derive_rng
from retroknn.graphio.dataset import Dataset
from retroknn.graphio.splits import build_few_shot_split, build_zero_shot_split
from retroknn.harness.ablation import adapter_config
from retroknn.harness.evaluate import EvalReport, evaluate_topk
from retroknn.harness.grid import grid_search_fixed
from retroknn.harness.pipeline import build_pipeline, gnn_predictions, predict_contexts

LOG = logging.getLogger("retroknn.harness")

FEWSHOT_KS = (5, 10)


@dataclass
class FewShotResult:
    reports: dict[tuple[str, str], EvalReport]
    table: pd.DataFrame


def _regimes(train: Dataset, val: Dataset, held: list[int], keep_fractions: list[float],
             seed: int) -> list[tuple[str, Dataset, Dataset]]:
    regimes = [("zero-shot", build_zero_shot_split(train, held), build_zero_shot_split(val, held))]
    for i, fraction in enumerate(keep_fractions):
        split_seed = int(derive_rng(seed, "fewshot", i).integers(2**31))
        regimes.append((f"few-shot-{fraction:g}",
                        build_few_shot_split(train, held, fraction, split_seed),
                        build_few_shot_split(val, held, fraction, split_seed + 1)))
    return regimes


def run_fewshot_experiment(train: Dataset, val: Dataset, test: Dataset, held_classes: list[int],
                           keep_fractions: list[float], cfg: RunConfig) -> FewShotResult:
    held = sorted(int(c) for c in held_classes)
    top_n = cfg.retrieval.top_n
    reports: dict[tuple[str, str], EvalReport] = {}
    rows = []
    for regime, sub_train, sub_val in _regimes(train, val, held, keep_fractions, cfg.seed):
        LOG.info("%s: %d training and %d validation records", regime, len(sub_train), len(sub_val))
        pipeline = build_pipeline(sub_train, sub_val, cfg)
        k = adapter_neighbors(cfg.retrieval.k_neighbors, pipeline.atom_store, pipeline.bond_store)
        val_ctx = pipeline.contexts(sub_val, k, cfg.index.n_probe)
        test_ctx = pipeline.contexts(test, k, cfg.index.n_probe)
        grid = grid_search_fixed(sub_val, pipeline.backbone, pipeline.atom_store, pipeline.bond_store,
                                 cfg.grid.temperatures, cfg.grid.lambdas, contexts=val_ctx)
        params = train_adapter(sub_val, pipeline.backbone, pipeline.atom_store, pipeline.bond_store,
                               adapter_config(cfg, grid, cfg.adapter.adapt_temperature, cfg.adapter.adapt_lambda),
                               contexts=val_ctx)
        systems = {
            "gnn-only": gnn_predictions(test_ctx, top_n),
            "fused": predict_contexts(test_ctx, AdapterFusion(params), top_n),
        }
        for system, preds in systems.items():
            report = evaluate_topk(preds, test, FEWSHOT_KS)
            reports[(regime, system)] = report
            classes = held if held else sorted(int(c) for c in report.per_class.index)
            for cls in classes:
                if cls not in report.per_class.index:
                    continue
                row = report.per_class.loc[cls]
                rows.append({"regime": regime, "system": system, "reaction_class": cls, "n": int(row["n"]),
                             **{f"top{k}": float(row[f"top{k}"]) for k in FEWSHOT_KS}})
    return FewShotResult(reports, pd.DataFrame(rows))
