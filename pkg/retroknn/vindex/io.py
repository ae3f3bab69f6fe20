"""
RKIX index files.

Layout (little-endian)::

    b"RKIX" | version u32 | kind u8 (0 flat, 1 ivfpq)
    flat:  N u64 | H u32 | ids u64[N] | vectors f32[N*H]
    ivfpq: N u64 | H u32 | n_list u32 | m u32 | ksub u32 | n_probe u32 | refine u32
           | ids u64[N] | coarse f32[n_list*H] | codebooks f32[m*ksub*H/m]
           | codes u8[N*m] | list assignment u32[N] | vectors f32[N*H] when refine > 0
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from retroknn.errors import FormatError
from retroknn.util import packing
from retroknn.util.bytestream import ByteStream
from retroknn.vindex.flat import FlatIndex, build_flat
from retroknn.vindex.ivfpq import IvfPqIndex, assemble_ivfpq

LOG = logging.getLogger("retroknn.vindex")

MAGIC = b"RKIX"
VERSION = 2
KIND_FLAT = 0
KIND_IVFPQ = 1

Index = FlatIndex | IvfPqIndex


def index_to_bytes(index: Index) -> list[bytes]:
    chunks = [packing.header(MAGIC, VERSION)]
    if isinstance(index, FlatIndex):
        dim = index.vectors.shape[1] if index.vectors.ndim == 2 else 0
        chunks += [packing.u8(KIND_FLAT), packing.u64(index.size), packing.u32(dim),
                   packing.u64_array(index.ids), packing.f32_array(index.vectors)]
    elif isinstance(index, IvfPqIndex):
        chunks += [packing.u8(KIND_IVFPQ), packing.u64(index.size), packing.u32(index.dim),
                   packing.u32(index.n_list), packing.u32(index.m), packing.u32(index.codebooks.shape[1]),
                   packing.u32(index.n_probe), packing.u32(index.refine),
                   packing.u64_array(index.ids), packing.f32_array(index.coarse_centroids),
                   packing.f32_array(index.codebooks), packing.u8_array(index.codes),
                   packing.u32_array(index.list_of)]
        if index.refine:
            chunks.append(packing.f32_array(index.vectors))
    else:
        raise TypeError(f"cannot serialize {type(index).__name__}")
    return chunks


def read_index(stream: ByteStream) -> Index:
    """Reads one index from ``stream``; EOFError propagates to the caller."""
    if not stream.readMagic(MAGIC):
        raise FormatError("not an index file")
    version = stream.readU32()
    if version != VERSION:
        raise FormatError(f"unsupported index version {version}")
    kind = stream.readU8()
    n = stream.readU64()
    dim = stream.readU32()
    if kind == KIND_FLAT:
        ids = stream.readU64Array(n)
        vectors = stream.readF32Array(n * dim).reshape(n, dim)
        return build_flat(vectors, ids)
    if kind == KIND_IVFPQ:
        n_list, m, ksub, n_probe, refine = (stream.readU32() for _ in range(5))
        if m == 0 or dim % m:
            raise FormatError(f"index dimension {dim} is not divisible by m={m}")
        dsub = dim // m
        ids = stream.readU64Array(n)
        coarse = stream.readF32Array(n_list * dim).reshape(n_list, dim)
        codebooks = stream.readF32Array(m * ksub * dsub).reshape(m, ksub, dsub)
        codes = stream.readU8Array(n * m).reshape(n, m)
        list_of = stream.readU32Array(n)
        if n and (list_of.max() >= n_list or codes.max() >= ksub):
            raise FormatError("index codes or list assignments out of range")
        vectors = stream.readF32Array(n * dim).reshape(n, dim) if refine else None
        return assemble_ivfpq(coarse, codebooks, codes, list_of, ids, n_probe, refine, vectors)
    raise FormatError(f"unknown index kind {kind}")


def save_index(index: Index, path: str | Path) -> None:
    packing.write_atomic(path, index_to_bytes(index))
    LOG.info("Saved %s index (%d entries) to %s", type(index).__name__, index.size, path)


def load_index(path: str | Path) -> Index:
    stream = ByteStream(Path(path).read_bytes())
    try:
        index = read_index(stream)
    except EOFError as exc:
        raise FormatError(f"{path}: truncated index file") from exc
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if stream:
        raise FormatError(f"{path}: {len(stream)} trailing bytes after index")
    return index
