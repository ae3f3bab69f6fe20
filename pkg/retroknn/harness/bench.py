"""
Per-record inference latency of the fused and classifier-only pipelines.

Each run times one pass over the dataset with ``time.perf_counter``; a
warm-up pass precedes the timed runs. Process CPU and RSS are sampled with
psutil, and each pipeline can append one summary row to a CSV file.
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
import psutil

from retroknn.backbone.params import BackboneParams
from retroknn.config import RunConfig
from retroknn.errors import EvaluationError
from retroknn.graphio.dataset import Dataset, ReactionRecord
from retroknn.retrieve.ranking import predict_gnn_only, predict_topk
from retroknn.retrieve.sites import Fusion
from retroknn.store import TemplateStore

LOG = logging.getLogger("retroknn.harness")


@dataclass
class BenchReport:
    pipeline: str
    mean_ms: float
    std_ms: float
    n_runs: int
    n_records: int
    fingerprint: str
    proc_cpu_pct: float
    proc_rss_mb: float

    def format(self) -> str:
        return f"{self.mean_ms:.2f} ± {self.std_ms:.2f} ms"


class _ProcessSampler:
    def __init__(self) -> None:
        self.proc = psutil.Process(os.getpid())
        # first call primes the counters and always returns 0
        self.proc.cpu_percent(interval=None)

    def sample(self) -> tuple[float, float]:
        cpu = self.proc.cpu_percent(interval=None) / (psutil.cpu_count() or 1)
        rss_mb = self.proc.memory_info().rss / (1024**2)
        return cpu, rss_mb


def time_runs(records: list[ReactionRecord], predict: Callable[[ReactionRecord], object], n_runs: int) -> np.ndarray:
    """Mean per-record milliseconds of each timed run."""
    for g in records:
        predict(g)
    per_run = np.zeros(n_runs)
    for run in range(n_runs):
        start = time.perf_counter()
        for g in records:
            predict(g)
        per_run[run] = (time.perf_counter() - start) * 1000.0 / len(records)
        LOG.debug("Run %d: %.3f ms per record", run, per_run[run])
    return per_run


def append_summary(report: BenchReport, path: str | Path) -> None:
    """Appends one row; the header is written only when the file is new."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    row = {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"), **asdict(report)}
    pd.DataFrame([row]).to_csv(path, mode="a", header=not path.exists(), index=False, float_format="%.4f")


def bench_latency(test: Dataset, backbone: BackboneParams, atom_store: TemplateStore, bond_store: TemplateStore,
                  fusion: Fusion, cfg: RunConfig, n_runs: int | None = None,
                  csv_path: str | Path | None = None) -> tuple[BenchReport, BenchReport]:
    """(fused, classifier-only) latency reports; dataset loading is not timed."""
    if not len(test):
        raise EvaluationError("latency benchmark needs at least one record")
    n_runs = cfg.harness.n_runs if n_runs is None else n_runs
    if n_runs < 1:
        raise EvaluationError("latency benchmark needs at least one run")
    csv_path = csv_path if csv_path is not None else cfg.harness.bench_csv
    records = list(test)
    retrieval = cfg.retrieval

    def fused(g: ReactionRecord) -> object:
        return predict_topk(g, backbone, atom_store, bond_store, fusion, retrieval.k_neighbors,
                            retrieval.top_n, cfg.index.n_probe)

    def gnn_only(g: ReactionRecord) -> object:
        return predict_gnn_only(g, backbone, retrieval.top_n)

    reports = []
    for name, predict in (("fused", fused), ("gnn-only", gnn_only)):
        sampler = _ProcessSampler()
        per_run = time_runs(records, predict, n_runs)
        cpu, rss_mb = sampler.sample()
        report = BenchReport(name, float(per_run.mean()), float(np.std(per_run)), n_runs, len(records),
                             cfg.fingerprint(), cpu, rss_mb)
        LOG.info("%s: %s per record over %d runs (cpu %.1f%%, rss %.1f MB)",
                 name, report.format(), n_runs, cpu, rss_mb)
        if csv_path is not None:
            append_summary(report, csv_path)
        reports.append(report)
    return reports[0], reports[1]
