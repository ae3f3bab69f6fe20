"""Reaction-class filtered splits for zero-shot and few-shot studies."""
from __future__ import annotations

import logging
import math
from collections.abc import Iterable

import numpy as np

from retroknn.errors import ConfigurationError
from retroknn.graphio.dataset import Dataset

LOG = logging.getLogger("retroknn.graphio")


def _check_classes(held_classes: Iterable[int]) -> set[int]:
    held = set(int(c) for c in held_classes)
    bad = sorted(c for c in held if not 1 <= c <= 10)
    if bad:
        raise ConfigurationError(f"held classes must lie in [1, 10], got {bad}")
    return held


def build_zero_shot_split(d: Dataset, held_classes: Iterable[int]) -> Dataset:
    held = _check_classes(held_classes)
    kept = [i for i, r in enumerate(d) if r.reaction_class not in held]
    LOG.info("Zero-shot split: kept %d of %d records (held classes %s)", len(kept), len(d), sorted(held))
    return d.subset(kept)


def build_few_shot_split(d: Dataset, held_classes: Iterable[int], keep_fraction: float, seed: int) -> Dataset:
    if not 0.0 <= keep_fraction <= 1.0:
        raise ConfigurationError(f"keep_fraction must lie in [0, 1], got {keep_fraction}")
    held = _check_classes(held_classes)
    rng = np.random.default_rng(seed)
    kept = {i for i, r in enumerate(d) if r.reaction_class not in held}
    for cls in sorted(held):
        members = np.asarray([i for i, r in enumerate(d) if r.reaction_class == cls], dtype=np.int64)
        n_keep = math.floor(keep_fraction * len(members))
        order = rng.permutation(members)
        kept.update(int(i) for i in order[:n_keep])
        LOG.debug("Few-shot split: class %d keeps %d of %d", cls, n_keep, len(members))
    LOG.info("Few-shot split: kept %d of %d records (fraction %.3f)", len(kept), len(d), keep_fraction)
    return d.subset(sorted(kept))
