"""
Run configuration: typed sections loaded from JSON, with command-line overrides.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from retroknn.errors import ConfigurationError

# Stream ids for derive_rng; one per stochastic step of the pipeline.
STREAMS = {
    "synthetic": 1,
    "backbone-init": 2,
    "backbone-train": 3,
    "index": 4,
    "adapter-init": 5,
    "adapter-train": 6,
    "fewshot": 7,
    "bench": 8,
}


@dataclass
class SyntheticConfig:
    n_records: int = 600
    n_atom_templates: int = 24
    n_bond_templates: int = 12
    rare_template_fraction: float = 0.3
    node_vocab: int = 8
    edge_vocab: int = 3
    min_nodes: int = 6
    max_nodes: int = 20
    val_fraction: float = 0.1
    test_fraction: float = 0.1


@dataclass
class BackboneConfig:
    n_layers: int = 6
    hidden: int = 320
    dropout: float = 0.2


@dataclass
class TrainConfig:
    lr: float = 0.001
    epochs: int = 50
    patience: int = 5
    batch_size: int = 16


@dataclass
class IndexConfig:
    kind: str = "ivfpq"
    n_list: int | None = None
    m: int = 8
    n_probe: int = 32
    kmeans_iters: int = 25
    refine: int = 4
    recall_target: float = 0.90
    partial_recall_target: float = 0.50


@dataclass
class RetrievalConfig:
    k_neighbors: int = 32
    top_n: int = 50


@dataclass
class AdapterConfig:
    lr: float = 0.001
    epochs: int = 10
    batch_size: int = 8
    adapt_temperature: bool = True
    adapt_lambda: bool = True
    fixed_temperature: float = 25.0
    fixed_lambda: float = 0.5
    init_temperature: float = 10.0


@dataclass
class GridConfig:
    temperatures: list[float] = field(default_factory=lambda: [1.0, 5.0, 25.0, 50.0])
    lambdas: list[float] = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])


@dataclass
class HarnessConfig:
    ks: list[int] = field(default_factory=lambda: [1, 3, 5, 10, 50])
    n_runs: int = 10
    held_classes: list[int] = field(default_factory=lambda: [6, 7, 8, 9, 10])
    keep_fractions: list[float] = field(default_factory=lambda: [0.1])
    sweep_neighbors: list[int] = field(default_factory=lambda: [1, 4, 8, 16, 32])
    bench_csv: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    log_level: str = "INFO"
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    index: IndexConfig = field(default_factory=IndexConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def _section_types() -> dict[str, type]:
    return {f.name: f.default_factory for f in dataclasses.fields(RunConfig) if f.default_factory is not dataclasses.MISSING}  # type: ignore[misc]


def _build_section(cls: type, values: dict[str, Any], name: str) -> Any:
    if not isinstance(values, dict):
        raise ConfigurationError(f"section '{name}' must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in '{name}': {', '.join(unknown)}")
    return cls(**values)


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    sections = _section_types()
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in sections:
            kwargs[key] = _build_section(sections[key], value, key)
        elif key in ("seed", "log_level"):
            kwargs[key] = value
        else:
            raise ConfigurationError(f"unknown config section '{key}'")
    return RunConfig(**kwargs)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a JSON object")
    return config_from_dict(data)


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` (or ``seed=value``) assignments in place."""
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override '{item}' is not of the form key=value")
        dotted, raw = item.split("=", 1)
        value = _parse_value(raw)
        parts = dotted.split(".")
        if len(parts) == 1 and parts[0] in ("seed", "log_level"):
            setattr(cfg, parts[0], value)
            continue
        if len(parts) != 2 or not hasattr(cfg, parts[0]) or parts[0] in ("seed", "log_level"):
            raise ConfigurationError(f"unknown override target '{dotted}'")
        section = getattr(cfg, parts[0])
        if parts[1] not in {f.name for f in dataclasses.fields(section)}:
            raise ConfigurationError(f"unknown key '{parts[1]}' in section '{parts[0]}'")
        setattr(section, parts[1], value)
    return cfg


def derive_rng(seed: int, stream: str, *extra: int) -> np.random.Generator:
    if stream not in STREAMS:
        raise ConfigurationError(f"unknown random stream '{stream}'")
    return np.random.default_rng([int(seed), STREAMS[stream], *[int(x) for x in extra]])
