"""
Adapter parameters and the RKAD checkpoint format.

Checkpoint layout (little-endian)::

    b"RKAD" | version u32 | H u32 | K u32 | adapt_temperature u8 | adapt_lambda u8
           | fixed_temperature f64 | fixed_lambda f64
           | every tensor of adapter_shapes() as f64, row-major, in that order
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from retroknn.backbone.params import glorot
from retroknn.errors import ConfigurationError, FormatError
from retroknn.util import packing
from retroknn.util.bytestream import ByteStream

LOG = logging.getLogger("retroknn.adapter")

MAGIC = b"RKAD"
VERSION = 1

TEMPERATURE_HEADS = frozenset({"W_ta", "b_ta", "W_tb", "b_tb"})
LAMBDA_HEADS = frozenset({"W_la", "b_la", "W_lb", "b_lb"})


def adapter_shapes(hidden: int, k: int) -> dict[str, tuple[int, ...]]:
    if hidden < 1 or k < 1:
        raise ConfigurationError("adapter needs a positive hidden size and neighbor count")
    return {
        "eps": (1,),
        "W_vg": (hidden, hidden),
        "b_vg": (hidden,),
        "W_vk": (hidden, k),
        "b_vk": (hidden,),
        "W_ek": (hidden, k),
        "b_ek": (hidden,),
        "W_vo": (hidden, 2 * hidden),
        "b_vo": (hidden,),
        "W_eo": (hidden, 3 * hidden),
        "b_eo": (hidden,),
        "W_ta": (1, hidden),
        "b_ta": (1,),
        "W_la": (1, hidden),
        "b_la": (1,),
        "W_tb": (1, hidden),
        "b_tb": (1,),
        "W_lb": (1, hidden),
        "b_lb": (1,),
    }


@dataclass
class AdapterParams:
    hidden: int
    k: int
    adapt_temperature: bool = True
    adapt_lambda: bool = True
    fixed_temperature: float = 25.0
    fixed_lambda: float = 0.5
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return adapter_shapes(self.hidden, self.k)

    def names(self) -> list[str]:
        return list(self.shapes())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def frozen(self) -> frozenset[str]:
        """Heads replaced by their fixed values; the optimizer leaves them alone."""
        frozen: frozenset[str] = frozenset()
        if not self.adapt_temperature:
            frozen |= TEMPERATURE_HEADS
        if not self.adapt_lambda:
            frozen |= LAMBDA_HEADS
        return frozen

    def copy(self) -> AdapterParams:
        return self.with_tensors({k: v.copy() for k, v in self.tensors.items()})

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> AdapterParams:
        return AdapterParams(self.hidden, self.k, self.adapt_temperature, self.adapt_lambda,
                             self.fixed_temperature, self.fixed_lambda, tensors)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros(s) for k, s in self.shapes().items()}

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


def zero_adapter(hidden: int, k: int, **flags) -> AdapterParams:
    return AdapterParams(hidden, k, **flags, tensors={n: np.zeros(s) for n, s in adapter_shapes(hidden, k).items()})


def init_adapter(hidden: int, k: int, rng: np.random.Generator, init_temperature: float = 10.0,
                 **flags) -> AdapterParams:
    tensors = {name: glorot(rng, shape) if len(shape) == 2 else np.zeros(shape)
               for name, shape in adapter_shapes(hidden, k).items()}
    # lambda starts near 0.73 so early training leans on the classifier
    tensors["b_la"][:] = 1.0
    tensors["b_lb"][:] = 1.0
    # a zero temperature bias would sit on the lower clamp where the head gets no gradient
    tensors["b_ta"][:] = init_temperature
    tensors["b_tb"][:] = init_temperature
    return AdapterParams(hidden, k, **flags, tensors=tensors)


def save_adapter(a: AdapterParams, path: str | Path) -> None:
    chunks = [packing.header(MAGIC, VERSION), packing.u32(a.hidden), packing.u32(a.k),
              packing.u8(a.adapt_temperature), packing.u8(a.adapt_lambda),
              packing.f64(a.fixed_temperature), packing.f64(a.fixed_lambda)]
    for name, shape in a.shapes().items():
        if a.tensors[name].shape != shape:
            raise ConfigurationError(f"adapter tensor '{name}' has shape {a.tensors[name].shape}, expected {shape}")
        chunks.append(packing.f64_array(a.tensors[name]))
    packing.write_atomic(path, chunks)
    LOG.info("Saved adapter checkpoint to %s", path)


def load_adapter(path: str | Path) -> AdapterParams:
    stream = ByteStream(Path(path).read_bytes())
    try:
        if not stream.readMagic(MAGIC):
            raise FormatError(f"{path}: not an adapter checkpoint")
        version = stream.readU32()
        if version != VERSION:
            raise FormatError(f"{path}: unsupported adapter checkpoint version {version}")
        hidden, k = stream.readU32(), stream.readU32()
        adapt_t, adapt_l = bool(stream.readU8()), bool(stream.readU8())
        fixed_t, fixed_l = stream.readF64(), stream.readF64()
        try:
            shapes = adapter_shapes(hidden, k)
        except ConfigurationError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        tensors = {name: stream.readF64Array(int(np.prod(shape))).reshape(shape) for name, shape in shapes.items()}
    except EOFError as exc:
        raise FormatError(f"{path}: truncated adapter checkpoint") from exc
    if stream:
        raise FormatError(f"{path}: {len(stream)} trailing bytes after adapter checkpoint")
    return AdapterParams(hidden, k, adapt_t, adapt_l, fixed_t, fixed_l, tensors)
