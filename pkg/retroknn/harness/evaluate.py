"""Top-K exact match at (reaction center, template) level."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd

from retroknn.errors import EvaluationError
from retroknn.graphio.dataset import Dataset
from retroknn.retrieve.ranking import RankedPrediction

LOG = logging.getLogger("retroknn.harness")

DEFAULT_KS = (1, 3, 5, 10, 50)


@dataclass
class EvalReport:
    ks: list[int]
    accuracy: dict[int, float]
    hits: dict[int, int]
    n_records: int
    per_class: pd.DataFrame = field(repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_records": self.n_records,
            "accuracy": {f"top{k}": self.accuracy[k] for k in self.ks},
            "hits": {f"top{k}": self.hits[k] for k in self.ks},
            "per_class": {int(cls): {col: (int(v) if col == "n" else float(v)) for col, v in row.items()}
                          for cls, row in self.per_class.iterrows()},
        }

    def table(self) -> pd.DataFrame:
        return pd.DataFrame({"k": self.ks, "accuracy": [self.accuracy[k] for k in self.ks],
                             "hits": [self.hits[k] for k in self.ks]})


def first_hit_rank(pred: RankedPrediction, centers: list[tuple[str, int, int]]) -> float:
    """1-based rank of the first ground-truth (site, template) pair, inf when none is ranked."""
    truth = set(centers)
    for rank, pair in enumerate(pred.pairs(), start=1):
        if pair in truth:
            return float(rank)
    return float("inf")


def evaluate_topk(preds: list[RankedPrediction], truth: Dataset, ks: list[int] | tuple[int, ...] = DEFAULT_KS) -> EvalReport:
    if len(preds) != len(truth):
        raise EvaluationError(f"{len(preds)} predictions for {len(truth)} records")
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise EvaluationError("top-K cut-offs must be positive")
    frame = pd.DataFrame({
        "reaction_class": [g.reaction_class for g in truth],
        "rank": [first_hit_rank(p, g.centers()) for p, g in zip(preds, truth)],
    })
    n = len(frame)
    if not n:
        LOG.warning("Evaluating an empty dataset; every accuracy is reported as 0")
    for k in ks:
        frame[f"top{k}"] = (frame["rank"] <= k).astype(np.float64)
    hits = {k: int(frame[f"top{k}"].sum()) for k in ks}
    accuracy = {k: hits[k] / n if n else 0.0 for k in ks}
    per_class = frame.groupby("reaction_class")[[f"top{k}" for k in ks]].mean()
    per_class.insert(0, "n", frame.groupby("reaction_class").size())
    return EvalReport(ks, accuracy, hits, n, per_class)
