"""
Ablation over fusion sources and the neighbor-count sweep.

Every system shares one backbone and one pair of stores; only the way the
per-site (T, lambda) is obtained changes. Partial adapters fix the disabled
quantity at the best grid-search value.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import pandas as pd

from retroknn.adapter.model import AdapterFusion
from retroknn.adapter.train import adapter_neighbors, contexts_loss, train_adapter
from retroknn.config import RunConfig
from retroknn.graphio.dataset import Dataset
from retroknn.harness.evaluate import EvalReport, evaluate_topk
from retroknn.harness.grid import GridResult, grid_search_fixed
from retroknn.harness.pipeline import Pipeline, gnn_predictions, predict_contexts
from retroknn.retrieve.sites import FixedFusion

LOG = logging.getLogger("retroknn.harness")

SYSTEMS = ("gnn-only", "fixed", "adaptive-T", "adaptive-lambda", "adapter")


@dataclass
class AblationResult:
    grid: GridResult
    reports: dict[str, EvalReport]

    def table(self) -> pd.DataFrame:
        rows = []
        for system, report in self.reports.items():
            rows.append({"system": system, **{f"top{k}": report.accuracy[k] for k in report.ks}})
        return pd.DataFrame(rows)


def adapter_config(cfg: RunConfig, grid: GridResult, adapt_temperature: bool, adapt_lambda: bool) -> RunConfig:
    adapter = dataclasses.replace(cfg.adapter, adapt_temperature=adapt_temperature, adapt_lambda=adapt_lambda,
                                  fixed_temperature=grid.temperature, fixed_lambda=grid.lam)
    return dataclasses.replace(cfg, adapter=adapter)


def run_ablation(pipeline: Pipeline, val: Dataset, test: Dataset, cfg: RunConfig) -> AblationResult:
    k = adapter_neighbors(cfg.retrieval.k_neighbors, pipeline.atom_store, pipeline.bond_store)
    top_n, ks = cfg.retrieval.top_n, cfg.harness.ks
    val_ctx = pipeline.contexts(val, k, cfg.index.n_probe)
    test_ctx = pipeline.contexts(test, k, cfg.index.n_probe)
    grid = grid_search_fixed(val, pipeline.backbone, pipeline.atom_store, pipeline.bond_store,
                             cfg.grid.temperatures, cfg.grid.lambdas, contexts=val_ctx)

    reports = {
        "gnn-only": evaluate_topk(gnn_predictions(test_ctx, top_n), test, ks),
        "fixed": evaluate_topk(predict_contexts(test_ctx, FixedFusion(grid.temperature, grid.lam), top_n), test, ks),
    }
    for system, adapt_t, adapt_l in (("adaptive-T", True, False), ("adaptive-lambda", False, True),
                                      ("adapter", True, True)):
        sub_cfg = adapter_config(cfg, grid, adapt_t, adapt_l)
        params = train_adapter(val, pipeline.backbone, pipeline.atom_store, pipeline.bond_store, sub_cfg,
                               contexts=val_ctx)
        reports[system] = evaluate_topk(predict_contexts(test_ctx, AdapterFusion(params), top_n), test, ks)
    for system in SYSTEMS:
        LOG.info("Ablation %-15s top-1 %.4f", system, reports[system].accuracy[min(ks)])
    return AblationResult(grid, reports)


def sweep_neighbors(pipeline: Pipeline, val: Dataset, test: Dataset, cfg: RunConfig,
                    neighbor_counts: list[int] | None = None) -> pd.DataFrame:
    """Retrains the adapter for every K and reports its validation loss and test top-1."""
    counts = cfg.harness.sweep_neighbors if neighbor_counts is None else neighbor_counts
    rows = []
    for count in counts:
        sub_cfg = dataclasses.replace(cfg, retrieval=dataclasses.replace(cfg.retrieval, k_neighbors=int(count)))
        k = adapter_neighbors(int(count), pipeline.atom_store, pipeline.bond_store)
        val_ctx = pipeline.contexts(val, k, cfg.index.n_probe)
        test_ctx = pipeline.contexts(test, k, cfg.index.n_probe)
        params = train_adapter(val, pipeline.backbone, pipeline.atom_store, pipeline.bond_store, sub_cfg,
                               contexts=val_ctx)
        report = evaluate_topk(predict_contexts(test_ctx, AdapterFusion(params), cfg.retrieval.top_n), test, [1])
        rows.append({"k_neighbors": k, "val_loss": contexts_loss(val_ctx, params), "top1": report.accuracy[1]})
        LOG.info("K=%d: top-1 %.4f", k, report.accuracy[1])
    return pd.DataFrame(rows)
