from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from retroknn.backbone.model import encode, head_probs
from retroknn.backbone.params import BackboneParams
from retroknn.errors import ConfigurationError, ParseError
from retroknn.graphio.dataset import ReactionRecord
from retroknn.retrieve.sites import Fusion, fuse, prepare_sites
from retroknn.store import TemplateStore
from retroknn.util import packing

LOG = logging.getLogger("retroknn.retrieve")

SITE_KINDS = ("atom", "bond")
MAX_TOP_N = 50


@dataclass(frozen=True)
class RankedEntry:
    kind: str
    site: int
    template: int
    prob: float

    def to_json(self) -> str:
        # probabilities keep 17 significant digits so they round-trip exactly
        return (f'{{"site": {{"kind": "{self.kind}", "index": {self.site}}}, '
                f'"template": {self.template}, "prob": {format(self.prob, ".17g")}}}')


@dataclass(frozen=True)
class RankedPrediction:
    entries: tuple[RankedEntry, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[RankedEntry]:
        return iter(self.entries)

    def __getitem__(self, index: int) -> RankedEntry:
        return self.entries[index]

    def pairs(self) -> list[tuple[str, int, int]]:
        return [(e.kind, e.site, e.template) for e in self.entries]

    def to_json(self) -> str:
        return '{"ranked": [' + ", ".join(e.to_json() for e in self.entries) + "]}"


def rank_sites(atom_probs: np.ndarray, bond_probs: np.ndarray, top_n: int = 50) -> RankedPrediction:
    """Pools every (site, template != 0) pair and keeps the ``top_n`` most probable.

    Ties go to atoms before bonds, then the lower site index, then the lower
    template id. Pairs with probability 0 are not emitted.
    """
    if not 1 <= top_n <= MAX_TOP_N:
        raise ConfigurationError(f"top_n must lie in [1, {MAX_TOP_N}], got {top_n}")
    kinds, sites, templates, probs = [], [], [], []
    for kind_id, p in enumerate((atom_probs, bond_probs)):
        n_sites, n_classes = p.shape
        if not n_sites or n_classes < 2:
            continue
        kinds.append(np.full(n_sites * (n_classes - 1), kind_id))
        sites.append(np.repeat(np.arange(n_sites), n_classes - 1))
        templates.append(np.tile(np.arange(1, n_classes), n_sites))
        probs.append(p[:, 1:].ravel())
    if not probs:
        return RankedPrediction()
    kind = np.concatenate(kinds)
    site = np.concatenate(sites)
    template = np.concatenate(templates)
    prob = np.concatenate(probs)
    keep = prob > 0.0
    kind, site, template, prob = kind[keep], site[keep], template[keep], prob[keep]
    order = np.lexsort((template, site, kind, -prob))[:top_n]
    return RankedPrediction(tuple(
        RankedEntry(SITE_KINDS[kind[i]], int(site[i]), int(template[i]), float(prob[i])) for i in order))


def predict_topk(g: ReactionRecord, p: BackboneParams, atom_store: TemplateStore, bond_store: TemplateStore,
                 fusion: Fusion, k_neighbors: int = 32, top_n: int = 50,
                 n_probe: int | None = None) -> RankedPrediction:
    ctx = prepare_sites(g, p, atom_store, bond_store, fusion.neighbors(k_neighbors), n_probe)
    atom_p, bond_p = fuse(ctx, fusion.site_parameters(ctx))
    return rank_sites(atom_p, bond_p, top_n)


def predict_gnn_only(g: ReactionRecord, p: BackboneParams, top_n: int = 50) -> RankedPrediction:
    atom_p, bond_p = head_probs(encode(g, p), p)
    return rank_sites(atom_p, bond_p, top_n)


def write_predictions(preds: list[RankedPrediction], path: str | Path) -> None:
    packing.write_atomic(path, [(pred.to_json() + "\n").encode("utf-8") for pred in preds])
    LOG.info("Wrote %d predictions to %s", len(preds), path)


def _entry_from_json(obj: object, line: int) -> RankedEntry:
    try:
        site = obj["site"]  # type: ignore[index]
        kind = site["kind"]
        if kind not in SITE_KINDS:
            raise ParseError(f"unknown site kind {kind!r}", line)
        return RankedEntry(kind, int(site["index"]), int(obj["template"]), float(obj["prob"]))  # type: ignore[index]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed ranked entry: {exc}", line) from exc


def read_predictions(path: str | Path) -> list[RankedPrediction]:
    preds = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_no) from exc
            if not isinstance(obj, dict) or not isinstance(obj.get("ranked"), list):
                raise ParseError("expected an object with a 'ranked' list", line_no)
            preds.append(RankedPrediction(tuple(_entry_from_json(e, line_no) for e in obj["ranked"])))
    return preds
