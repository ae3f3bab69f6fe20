"""
Atom and bond template stores.

Every atom of every training record contributes one entry (embedding, atom
label) and every bond one entry (embedding, bond label); non-center sites are
stored with label 0. Records are visited in dataset order, nodes ascending and
edges ascending within a record.

Store file layout (little-endian)::

    b"RKST" | version u32 | kind u8 (0 atom, 1 bond) | N u64 | H u32
            | keys f32[N*H] | values u32[N] | index length u64 | RKIX bytes
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from retroknn.backbone.model import encode
from retroknn.backbone.params import BackboneParams
from retroknn.config import IndexConfig, derive_rng
from retroknn.errors import ConfigurationError, FormatError
from retroknn.graphio.dataset import Dataset
from retroknn.util import packing
from retroknn.util.bytestream import ByteStream
from retroknn.vindex import FlatIndex, Index, build_flat, default_n_list, read_index, train_ivfpq
from retroknn.vindex.io import index_to_bytes

LOG = logging.getLogger("retroknn.store")

MAGIC = b"RKST"
VERSION = 1
KINDS = ("atom", "bond")


@dataclass(frozen=True)
class TemplateStore:
    keys: np.ndarray
    values: np.ndarray
    index: Index
    kind: str

    def __len__(self) -> int:
        return len(self.values)

    @property
    def dim(self) -> int:
        return self.keys.shape[1]

    @property
    def key_bytes(self) -> int:
        return int(self.keys.nbytes)


def build_index(keys: np.ndarray, index_cfg: IndexConfig, seed: int, stream_id: int = 0) -> Index:
    """Index over ``keys``; falls back to flat when there are too few keys for IVF-PQ."""
    if index_cfg.kind == "flat":
        return build_flat(keys)
    if index_cfg.kind != "ivfpq":
        raise ConfigurationError(f"unknown index kind '{index_cfg.kind}'")
    n = len(keys)
    n_list = index_cfg.n_list if index_cfg.n_list is not None else default_n_list(n)
    if n < max(n_list, 1):
        LOG.warning("Only %d keys for %d inverted lists; using a flat index", n, n_list)
        return build_flat(keys)
    sub_seed = int(derive_rng(seed, "index", stream_id).integers(2**31))
    return train_ivfpq(keys, n_list, index_cfg.m, index_cfg.kmeans_iters, sub_seed, n_probe=index_cfg.n_probe,
                       refine=index_cfg.refine)


def build_stores(train: Dataset, p: BackboneParams, index_cfg: IndexConfig,
                 seed: int = 0) -> tuple[TemplateStore, TemplateStore]:
    if train.node_vocab_size > p.node_vocab or train.edge_vocab_size > p.edge_vocab:
        raise ConfigurationError("dataset vocabulary exceeds the backbone vocabulary")
    atom_keys: list[np.ndarray] = []
    bond_keys: list[np.ndarray] = []
    atom_values: list[np.ndarray] = []
    bond_values: list[np.ndarray] = []
    LOG.info("Encoding %d records for the template stores", len(train))
    for g in train:
        emb = encode(g, p)
        atom_keys.append(emb.node_embeddings)
        atom_values.append(g.atom_targets)
        bond_keys.append(emb.edge_embeddings)
        bond_values.append(g.bond_targets)

    stores = []
    for stream_id, (kind, keys, values) in enumerate((("atom", atom_keys, atom_values), ("bond", bond_keys, bond_values))):
        k = np.vstack(keys).astype(np.float32) if keys else np.zeros((0, p.hidden), dtype=np.float32)
        v = np.concatenate(values).astype(np.int64) if values else np.zeros(0, dtype=np.int64)
        index = build_index(k, index_cfg, seed, stream_id)
        stores.append(TemplateStore(k, v, index, kind))
        LOG.info("Built %s store: %d entries (%d with a template)", kind, len(v), int(np.count_nonzero(v)))
    return stores[0], stores[1]


def save_store(s: TemplateStore, path: str | Path) -> None:
    index_chunks = index_to_bytes(s.index)
    chunks = [packing.header(MAGIC, VERSION), packing.u8(KINDS.index(s.kind)),
              packing.u64(len(s)), packing.u32(s.keys.shape[1]),
              packing.f32_array(s.keys), packing.u32_array(s.values),
              packing.u64(sum(len(c) for c in index_chunks)), *index_chunks]
    packing.write_atomic(path, chunks)
    LOG.info("Saved %s store (%d entries) to %s", s.kind, len(s), path)


def load_store(path: str | Path) -> TemplateStore:
    stream = ByteStream(Path(path).read_bytes())
    try:
        if not stream.readMagic(MAGIC):
            raise FormatError("not a template store")
        version = stream.readU32()
        if version != VERSION:
            raise FormatError(f"unsupported store version {version}")
        kind_id = stream.readU8()
        if kind_id >= len(KINDS):
            raise FormatError(f"unknown store kind {kind_id}")
        n = stream.readU64()
        dim = stream.readU32()
        keys = stream.readF32Array(n * dim).reshape(n, dim)
        values = stream.readU32Array(n)
        index_len = stream.readU64()
        index_stream = ByteStream(stream.read(index_len))
        index = read_index(index_stream)
    except EOFError as exc:
        raise FormatError(f"{path}: truncated template store") from exc
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if stream or index_stream:
        raise FormatError(f"{path}: trailing bytes in template store")
    if index.size != n:
        raise FormatError(f"{path}: index holds {index.size} entries, store holds {n}")
    return TemplateStore(keys, values, index, KINDS[kind_id])


def store_summary(atom: TemplateStore, bond: TemplateStore) -> pd.DataFrame:
    rows = []
    for s in (atom, bond):
        rows.append({
            "store": s.kind,
            "entries": len(s),
            "centers": int(np.count_nonzero(s.values)),
            "templates": int(len(np.unique(s.values[s.values > 0]))),
            "key_bytes": s.key_bytes,
            "index": "flat" if isinstance(s.index, FlatIndex) else "ivfpq",
        })
    return pd.DataFrame(rows)
