"""
Labeled reaction graphs and the JSONL dataset format.

The first line of a dataset file is a header object with the template-set and
vocabulary sizes; every following line is one record::

    {"n_atom_templates": 20, "n_bond_templates": 10, "node_vocab": 8, "edge_vocab": 3}
    {"nodes": [0, 3, 1], "edges": [[0, 1, 2], [1, 2, 0]], "atom_labels": [0, 5, 0], "bond_labels": [0, 0], "class": 4}
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from retroknn.errors import ParseError, ValidationError

LOG = logging.getLogger("retroknn.graphio")

HEADER_KEYS = ("n_atom_templates", "n_bond_templates", "node_vocab", "edge_vocab")
RECORD_KEYS = ("nodes", "edges", "atom_labels", "bond_labels", "class")


@dataclass(frozen=True)
class ReactionRecord:
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int, int], ...]
    atom_labels: tuple[int, ...]
    bond_labels: tuple[int, ...]
    reaction_class: int

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def node_features(self) -> np.ndarray:
        return np.asarray(self.nodes, dtype=np.int64)

    @cached_property
    def edge_index(self) -> np.ndarray:
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int64)
        return np.asarray([(u, v) for u, v, _ in self.edges], dtype=np.int64)

    @cached_property
    def edge_features(self) -> np.ndarray:
        return np.asarray([f for _, _, f in self.edges], dtype=np.int64)

    @cached_property
    def atom_targets(self) -> np.ndarray:
        return np.asarray(self.atom_labels, dtype=np.int64)

    @cached_property
    def bond_targets(self) -> np.ndarray:
        return np.asarray(self.bond_labels, dtype=np.int64)

    def centers(self) -> list[tuple[str, int, int]]:
        """(kind, site index, template) for every site carrying a nonzero label."""
        out = [("atom", i, t) for i, t in enumerate(self.atom_labels) if t]
        out += [("bond", i, t) for i, t in enumerate(self.bond_labels) if t]
        return out

    def to_json(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": [list(e) for e in self.edges],
            "atom_labels": list(self.atom_labels),
            "bond_labels": list(self.bond_labels),
            "class": self.reaction_class,
        }


@dataclass(frozen=True)
class Dataset:
    records: tuple[ReactionRecord, ...] = ()
    n_atom_templates: int = 0
    n_bond_templates: int = 0
    node_vocab_size: int = 0
    edge_vocab_size: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ReactionRecord]:
        return iter(self.records)

    def __getitem__(self, index: int) -> ReactionRecord:
        return self.records[index]

    def subset(self, indices: Iterable[int]) -> Dataset:
        return replace(self, records=tuple(self.records[i] for i in indices))

    def with_records(self, records: Sequence[ReactionRecord]) -> Dataset:
        return replace(self, records=tuple(records))

    def header(self) -> dict[str, int]:
        return {
            "n_atom_templates": self.n_atom_templates,
            "n_bond_templates": self.n_bond_templates,
            "node_vocab": self.node_vocab_size,
            "edge_vocab": self.edge_vocab_size,
        }

    def validate(self) -> None:
        for index, record in enumerate(self.records):
            validate_record(record, self, index)


def validate_record(record: ReactionRecord, d: Dataset, index: int) -> None:
    n = record.n_nodes
    for feat in record.nodes:
        if not 0 <= feat < d.node_vocab_size:
            raise ValidationError(f"node feature {feat} outside vocabulary of {d.node_vocab_size}", index)
    seen: set[tuple[int, int]] = set()
    for u, v, feat in record.edges:
        if u == v:
            raise ValidationError(f"self-loop on node {u}", index)
        if not u < v:
            raise ValidationError(f"edge ({u},{v}) is not in canonical u < v order", index)
        if u < 0 or v >= n:
            raise ValidationError(f"edge ({u},{v}) references a node outside 0..{n - 1}", index)
        if (u, v) in seen:
            raise ValidationError(f"duplicate edge ({u},{v})", index)
        seen.add((u, v))
        if not 0 <= feat < d.edge_vocab_size:
            raise ValidationError(f"edge feature {feat} outside vocabulary of {d.edge_vocab_size}", index)
    if len(record.atom_labels) != n:
        raise ValidationError(f"{len(record.atom_labels)} atom labels for {n} nodes", index)
    if len(record.bond_labels) != record.n_edges:
        raise ValidationError(f"{len(record.bond_labels)} bond labels for {record.n_edges} edges", index)
    if any(not 0 <= t <= d.n_atom_templates for t in record.atom_labels):
        raise ValidationError(f"atom label outside [0, {d.n_atom_templates}]", index)
    if any(not 0 <= t <= d.n_bond_templates for t in record.bond_labels):
        raise ValidationError(f"bond label outside [0, {d.n_bond_templates}]", index)
    if not 1 <= record.reaction_class <= 10:
        raise ValidationError(f"reaction class {record.reaction_class} outside [1, 10]", index)


def _int_list(value: object, key: str, line: int) -> list[int]:
    if not isinstance(value, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in value):
        raise ParseError(f"'{key}' must be an array of integers", line)
    return value


def _record_from_json(obj: object, line: int) -> ReactionRecord:
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object", line)
    missing = [k for k in RECORD_KEYS if k not in obj]
    if missing:
        raise ParseError(f"missing key(s): {', '.join(missing)}", line)
    edges = obj["edges"]
    if not isinstance(edges, list):
        raise ParseError("'edges' must be an array of [u, v, feat] triples", line)
    triples = []
    for edge in edges:
        triple = _int_list(edge, "edges", line)
        if len(triple) != 3:
            raise ParseError("'edges' must be an array of [u, v, feat] triples", line)
        triples.append((triple[0], triple[1], triple[2]))
    cls = obj["class"]
    if not isinstance(cls, int) or isinstance(cls, bool):
        raise ParseError("'class' must be an integer", line)
    return ReactionRecord(
        nodes=tuple(_int_list(obj["nodes"], "nodes", line)),
        edges=tuple(triples),
        atom_labels=tuple(_int_list(obj["atom_labels"], "atom_labels", line)),
        bond_labels=tuple(_int_list(obj["bond_labels"], "bond_labels", line)),
        reaction_class=cls,
    )


def parse_dataset(path: str | Path) -> Dataset:
    header: dict | None = None
    records: list[ReactionRecord] = []
    with Path(path).open("r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", line_no) from exc
            if header is None:
                if not isinstance(obj, dict) or any(k not in obj for k in HEADER_KEYS):
                    raise ParseError(f"first line must be a header with {', '.join(HEADER_KEYS)}", line_no)
                header = {k: obj[k] for k in HEADER_KEYS}
                if not all(isinstance(v, int) and v >= 0 for v in header.values()):
                    raise ParseError("header sizes must be non-negative integers", line_no)
                continue
            records.append(_record_from_json(obj, line_no))

    if header is None:
        return Dataset()
    d = Dataset(
        records=tuple(records),
        n_atom_templates=header["n_atom_templates"],
        n_bond_templates=header["n_bond_templates"],
        node_vocab_size=header["node_vocab"],
        edge_vocab_size=header["edge_vocab"],
    )
    d.validate()
    LOG.debug("Parsed %d records from %s", len(d), path)
    return d


def dataset_lines(d: Dataset) -> list[str]:
    lines = [json.dumps(d.header(), separators=(", ", ": "))]
    lines += [json.dumps(r.to_json(), separators=(", ", ": ")) for r in d.records]
    return lines


def write_dataset(d: Dataset, path: str | Path) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text("\n".join(dataset_lines(d)) + "\n", encoding="utf-8")
    LOG.info("Wrote %d records to %s", len(d), target)


def label_inventory(d: Dataset) -> tuple[set[int], set[int]]:
    """Atom and bond template ids that occur at least once in ``d``."""
    atoms = {t for r in d for t in r.atom_labels if t}
    bonds = {t for r in d for t in r.bond_labels if t}
    return atoms, bonds
