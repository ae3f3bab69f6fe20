"""
Backbone parameters and the RKBB checkpoint format.

Checkpoint layout (little-endian)::

    b"RKBB" | version u32 | L u32 | H u32 | node_vocab u32 | edge_vocab u32
           | n_atom_templates u32 | n_bond_templates u32
           | every tensor of param_names() as f64, row-major, in that order
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from retroknn.errors import ConfigurationError, FormatError
from retroknn.util import packing
from retroknn.util.bytestream import ByteStream

LOG = logging.getLogger("retroknn.backbone")

MAGIC = b"RKBB"
VERSION = 1


@dataclass
class BackboneParams:
    n_layers: int
    hidden: int
    node_vocab: int
    edge_vocab: int
    n_atom_templates: int
    n_bond_templates: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return param_shapes(self.n_layers, self.hidden, self.node_vocab, self.edge_vocab,
                            self.n_atom_templates, self.n_bond_templates)

    def names(self) -> list[str]:
        return list(self.shapes())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> BackboneParams:
        return self.with_tensors({k: v.copy() for k, v in self.tensors.items()})

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> BackboneParams:
        return BackboneParams(self.n_layers, self.hidden, self.node_vocab, self.edge_vocab,
                              self.n_atom_templates, self.n_bond_templates, tensors)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros(s) for k, s in self.shapes().items()}

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())

    def check(self) -> None:
        for name, shape in self.shapes().items():
            tensor = self.tensors.get(name)
            if tensor is None:
                raise ConfigurationError(f"backbone tensor '{name}' is missing")
            if tensor.shape != shape:
                raise ConfigurationError(f"backbone tensor '{name}' has shape {tensor.shape}, expected {shape}")


def param_shapes(n_layers: int, hidden: int, node_vocab: int, edge_vocab: int,
                 n_atom_templates: int, n_bond_templates: int) -> dict[str, tuple[int, ...]]:
    """Tensor names and shapes in checkpoint order."""
    if n_layers < 1 or hidden < 1:
        raise ConfigurationError("backbone needs at least one layer and a positive hidden size")
    shapes: dict[str, tuple[int, ...]] = {}
    for layer in range(n_layers):
        d_in = node_vocab if layer == 0 else hidden
        shapes[f"mp{layer}.W_s"] = (hidden, d_in)
        shapes[f"mp{layer}.b_s"] = (hidden,)
        shapes[f"mp{layer}.W_m"] = (hidden, d_in + edge_vocab)
        shapes[f"mp{layer}.b_m"] = (hidden,)
    shapes["edge.W"] = (hidden, hidden + edge_vocab)
    shapes["edge.b"] = (hidden,)
    shapes["atom.W1"] = (hidden, hidden)
    shapes["atom.b1"] = (hidden,)
    shapes["atom.W2"] = (n_atom_templates + 1, hidden)
    shapes["atom.b2"] = (n_atom_templates + 1,)
    shapes["bond.W1"] = (hidden, hidden)
    shapes["bond.b1"] = (hidden,)
    shapes["bond.W2"] = (n_bond_templates + 1, hidden)
    shapes["bond.b2"] = (n_bond_templates + 1,)
    return shapes


def glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_backbone(n_layers: int, hidden: int, node_vocab: int, edge_vocab: int,
                  n_atom_templates: int, n_bond_templates: int,
                  rng: np.random.Generator) -> BackboneParams:
    shapes = param_shapes(n_layers, hidden, node_vocab, edge_vocab, n_atom_templates, n_bond_templates)
    tensors = {name: glorot(rng, shape) if len(shape) == 2 else np.zeros(shape) for name, shape in shapes.items()}
    return BackboneParams(n_layers, hidden, node_vocab, edge_vocab, n_atom_templates, n_bond_templates, tensors)


def save_backbone(p: BackboneParams, path: str | Path) -> None:
    p.check()
    chunks = [packing.header(MAGIC, VERSION)]
    chunks += [packing.u32(v) for v in (p.n_layers, p.hidden, p.node_vocab, p.edge_vocab,
                                        p.n_atom_templates, p.n_bond_templates)]
    chunks += [packing.f64_array(p.tensors[name]) for name in p.names()]
    packing.write_atomic(path, chunks)
    LOG.info("Saved backbone checkpoint to %s", path)


def load_backbone(path: str | Path) -> BackboneParams:
    stream = ByteStream(Path(path).read_bytes())
    try:
        if not stream.readMagic(MAGIC):
            raise FormatError(f"{path}: not a backbone checkpoint")
        version = stream.readU32()
        if version != VERSION:
            raise FormatError(f"{path}: unsupported backbone checkpoint version {version}")
        dims = [stream.readU32() for _ in range(6)]
        try:
            shapes = param_shapes(*dims)
        except ConfigurationError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        tensors = {name: stream.readF64Array(int(np.prod(shape))).reshape(shape) for name, shape in shapes.items()}
    except EOFError as exc:
        raise FormatError(f"{path}: truncated backbone checkpoint") from exc
    if stream:
        raise FormatError(f"{path}: {len(stream)} trailing bytes after backbone checkpoint")
    return BackboneParams(*dims, tensors=tensors)
