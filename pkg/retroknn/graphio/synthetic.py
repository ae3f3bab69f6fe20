"""
Seeded synthetic reaction corpus.

Every template is bound to one radius-1 neighborhood signature. Graphs are
grown around a planted motif carrying that signature, and labels are then
assigned by a pure lookup from each site's signature, so identical local
structure always carries the identical label. A fraction of templates is
planted fewer than five times in train but still appears in test.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from math import comb

import numpy as np

from retroknn.errors import GenerationError
from retroknn.graphio.dataset import Dataset, ReactionRecord

LOG = logging.getLogger("retroknn.graphio")

RARE_MAX_COUNT = 4
COMMON_MIN_COUNT = 5
MAX_MOTIF_DEGREE = 3
MAX_BOND_EXTRA = 2
PRIMARY_CLASS_PROB = 0.85
MAX_REGROW = 500

AtomSig = tuple[int, tuple[tuple[int, int], ...]]
BondSig = tuple[int, tuple[AtomSig, AtomSig]]


def atom_signature(nodes: list[int] | tuple[int, ...], adjacency: dict[int, list[tuple[int, int]]], v: int) -> AtomSig:
    """(feature of v, sorted multiset of (edge feature, neighbor feature))."""
    return nodes[v], tuple(sorted((e, nodes[u]) for u, e in adjacency.get(v, [])))


def bond_signature(nodes, adjacency, u: int, v: int, feat: int) -> BondSig:
    a, b = sorted((atom_signature(nodes, adjacency, u), atom_signature(nodes, adjacency, v)))
    return feat, (a, b)


def record_signatures(record: ReactionRecord) -> tuple[list[AtomSig], list[BondSig]]:
    adjacency = _adjacency(record.edges)
    atoms = [atom_signature(record.nodes, adjacency, v) for v in range(record.n_nodes)]
    bonds = [bond_signature(record.nodes, adjacency, u, v, f) for u, v, f in record.edges]
    return atoms, bonds


def _adjacency(edges) -> dict[int, list[tuple[int, int]]]:
    adjacency: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for u, v, f in edges:
        adjacency[u].append((v, f))
        adjacency[v].append((u, f))
    return adjacency


class _Motif:
    """A planted local structure: node features, edges, and protected center nodes."""

    def __init__(self, nodes: list[int], edges: dict[tuple[int, int], int], protected: set[int]) -> None:
        self.nodes = nodes
        self.edges = edges
        self.protected = protected


def _atom_motif(rng: np.random.Generator, node_vocab: int, edge_vocab: int) -> tuple[AtomSig, _Motif]:
    center = int(rng.integers(node_vocab))
    degree = int(rng.integers(1, MAX_MOTIF_DEGREE + 1))
    nbrs = sorted((int(rng.integers(edge_vocab)), int(rng.integers(node_vocab))) for _ in range(degree))
    nodes = [center] + [x for _, x in nbrs]
    edges = {(0, i + 1): e for i, (e, _) in enumerate(nbrs)}
    return (center, tuple(nbrs)), _Motif(nodes, edges, {0})


def _bond_motif(rng: np.random.Generator, node_vocab: int, edge_vocab: int) -> tuple[BondSig, _Motif]:
    while True:
        n_u = int(rng.integers(0, MAX_BOND_EXTRA + 1))
        n_v = int(rng.integers(0, MAX_BOND_EXTRA + 1))
        if n_u + n_v:
            break
    xu, xv = int(rng.integers(node_vocab)), int(rng.integers(node_vocab))
    feat = int(rng.integers(edge_vocab))
    nodes = [xu, xv]
    edges = {(0, 1): feat}
    for anchor, count in ((0, n_u), (1, n_v)):
        for _ in range(count):
            nodes.append(int(rng.integers(node_vocab)))
            edges[(anchor, len(nodes) - 1)] = int(rng.integers(edge_vocab))
    motif = _Motif(nodes, edges, {0, 1})
    adjacency = _adjacency([(u, v, f) for (u, v), f in edges.items()])
    return bond_signature(nodes, adjacency, 0, 1, feat), motif


def _capacity(node_vocab: int, edge_vocab: int) -> tuple[int, int]:
    pairs = node_vocab * edge_vocab
    atom = node_vocab * sum(comb(pairs + d - 1, d) for d in range(1, MAX_MOTIF_DEGREE + 1))
    side = node_vocab * sum(comb(pairs + d - 1, d) for d in range(0, MAX_BOND_EXTRA + 1))
    return atom, edge_vocab * side * side


def _sample_motifs(count: int, sampler, rng, node_vocab: int, edge_vocab: int, kind: str) -> dict:
    motifs: dict = {}
    attempts = 0
    while len(motifs) < count:
        attempts += 1
        if attempts > 1000 * max(count, 1):
            raise GenerationError(f"could not find {count} distinct {kind} neighborhoods")
        sig, motif = sampler(rng, node_vocab, edge_vocab)
        if sig not in motifs:
            motifs[sig] = motif
    return motifs


def _grow_graph(motif: _Motif, rng: np.random.Generator, n_target: int, node_vocab: int, edge_vocab: int):
    nodes = list(motif.nodes)
    edges = dict(motif.edges)
    attachable = [i for i in range(len(nodes)) if i not in motif.protected]
    while len(nodes) < n_target:
        parent = attachable[int(rng.integers(len(attachable)))]
        nodes.append(int(rng.integers(node_vocab)))
        edges[(parent, len(nodes) - 1)] = int(rng.integers(edge_vocab))
        attachable.append(len(nodes) - 1)
    n_rings = int(rng.integers(0, 1 + len(nodes) // 5))
    for _ in range(n_rings):
        if len(attachable) < 2:
            break
        a, b = rng.choice(attachable, size=2, replace=False)
        key = (int(min(a, b)), int(max(a, b)))
        if key not in edges:
            edges[key] = int(rng.integers(edge_vocab))

    perm = rng.permutation(len(nodes))
    shuffled = [0] * len(nodes)
    for old, new in enumerate(perm):
        shuffled[int(new)] = nodes[old]
    relabeled = sorted(
        (min(int(perm[u]), int(perm[v])), max(int(perm[u]), int(perm[v])), f) for (u, v), f in edges.items()
    )
    return shuffled, relabeled


class _Labeler:
    def __init__(self, atom_table: dict[AtomSig, int], bond_table: dict[BondSig, int]) -> None:
        self.atom_table = atom_table
        self.bond_table = bond_table

    def __call__(self, nodes: list[int], edges: list[tuple[int, int, int]]) -> tuple[tuple[int, ...], tuple[int, ...]]:
        adjacency = _adjacency(edges)
        atoms = tuple(self.atom_table.get(atom_signature(nodes, adjacency, v), 0) for v in range(len(nodes)))
        bonds = tuple(self.bond_table.get(bond_signature(nodes, adjacency, u, v, f), 0) for u, v, f in edges)
        return atoms, bonds


def generate_synthetic(
    n_records: int,
    n_atom_templates: int,
    n_bond_templates: int,
    rare_template_fraction: float,
    seed: int,
    node_vocab: int = 8,
    edge_vocab: int = 3,
    min_nodes: int = 6,
    max_nodes: int = 20,
    val_fraction: float = 0.1,
    test_fraction: float = 0.1,
) -> tuple[Dataset, Dataset, Dataset]:
    if min(n_records, n_atom_templates + n_bond_templates, node_vocab, edge_vocab) <= 0:
        raise GenerationError("record count, template counts and vocabularies must be positive")
    if n_atom_templates < 0 or n_bond_templates < 0:
        raise GenerationError("template counts must be non-negative")
    if not 0.0 <= rare_template_fraction <= 1.0:
        raise GenerationError("rare_template_fraction must lie in [0, 1]")
    if not 1 <= min_nodes <= max_nodes:
        raise GenerationError(f"invalid node range [{min_nodes}, {max_nodes}]")
    atom_cap, bond_cap = _capacity(node_vocab, edge_vocab)
    if n_atom_templates > atom_cap or n_bond_templates > bond_cap:
        raise GenerationError(
            f"requested {n_atom_templates}/{n_bond_templates} templates but only "
            f"{atom_cap}/{bond_cap} distinct atom/bond neighborhoods exist"
        )

    rng = np.random.default_rng(seed)
    atom_motifs = _sample_motifs(n_atom_templates, _atom_motif, rng, node_vocab, edge_vocab, "atom")
    bond_motifs = _sample_motifs(n_bond_templates, _bond_motif, rng, node_vocab, edge_vocab, "bond")
    atom_table = {sig: t for t, sig in enumerate(atom_motifs, start=1)}
    bond_table = {sig: t for t, sig in enumerate(bond_motifs, start=1)}
    motif_of = {("atom", t): m for t, m in enumerate(atom_motifs.values(), start=1)}
    motif_of.update({("bond", t): m for t, m in enumerate(bond_motifs.values(), start=1)})
    units = list(motif_of)
    primary_class = {u: int(rng.integers(1, 11)) for u in units}

    n_val = round(n_records * val_fraction)
    n_test = round(n_records * test_fraction)
    n_train = n_records - n_val - n_test
    n_rare = round(rare_template_fraction * len(units))
    rare = set(int(i) for i in rng.choice(len(units), size=n_rare, replace=False))
    common = [i for i in range(len(units)) if i not in rare]

    train_counts = np.zeros(len(units), dtype=np.int64)
    for i in sorted(rare):
        train_counts[i] = int(rng.integers(1, RARE_MAX_COUNT + 1))
    train_counts[common] = COMMON_MIN_COUNT
    remaining = n_train - int(train_counts.sum())
    if remaining < 0 or (remaining > 0 and not common):
        raise GenerationError(
            f"{n_train} training records cannot host {len(common)} common and {n_rare} rare templates"
        )
    if n_test < n_rare:
        raise GenerationError(f"{n_test} test records cannot cover {n_rare} rare templates")
    if remaining:
        ranks = rng.permutation(len(common))
        weights = 1.0 / (1.0 + ranks)
        picks = rng.choice(len(common), size=remaining, p=weights / weights.sum())
        np.add.at(train_counts, np.asarray(common)[picks], 1)

    train_plan = rng.permutation(np.repeat(np.arange(len(units)), train_counts))
    val_plan = rng.choice(len(units), size=n_val)
    test_plan = rng.permutation(np.concatenate([np.asarray(sorted(rare), dtype=np.int64),
                                                rng.choice(len(units), size=n_test - n_rare)]))

    labeler = _Labeler(atom_table, bond_table)
    rare_units = {units[i] for i in rare}

    def stray_rare(unit, atom_labels, bond_labels) -> bool:
        present = {("atom", t) for t in atom_labels if t} | {("bond", t) for t in bond_labels if t}
        return bool((present & rare_units) - {unit})

    def realize(plan: np.ndarray, keep_rare_counts: bool) -> Dataset:
        records = []
        for unit_index in plan:
            unit = units[int(unit_index)]
            # a train graph carrying an unplanned rare template would push its count past the cap
            for _ in range(MAX_REGROW):
                n_target = max(int(rng.integers(min_nodes, max_nodes + 1)), len(motif_of[unit].nodes))
                nodes, edges = _grow_graph(motif_of[unit], rng, n_target, node_vocab, edge_vocab)
                atom_labels, bond_labels = labeler(nodes, edges)
                if not keep_rare_counts or not stray_rare(unit, atom_labels, bond_labels):
                    break
            else:
                raise GenerationError(f"could not grow a graph around {unit[0]} template {unit[1]} "
                                      f"without touching a rare template")
            cls = primary_class[unit] if rng.random() < PRIMARY_CLASS_PROB else int(rng.integers(1, 11))
            records.append(ReactionRecord(tuple(nodes), tuple(edges), atom_labels, bond_labels, cls))
        return Dataset(tuple(records), n_atom_templates, n_bond_templates, node_vocab, edge_vocab)

    train = realize(train_plan, keep_rare_counts=True)
    val, test = realize(val_plan, keep_rare_counts=False), realize(test_plan, keep_rare_counts=False)
    LOG.info(
        "Generated synthetic corpus: %d/%d/%d records, %d atom + %d bond templates (%d rare)",
        len(train), len(val), len(test), n_atom_templates, n_bond_templates, n_rare,
    )
    return train, val, test
