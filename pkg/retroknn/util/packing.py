"""Little-endian writers for the RK* binary artifacts, plus atomic file output."""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np


def u8(value: int) -> bytes:
    return int(value).to_bytes(1, byteorder='little')


def u32(value: int) -> bytes:
    return int(value).to_bytes(4, byteorder='little')


def u64(value: int) -> bytes:
    return int(value).to_bytes(8, byteorder='little')


def f64(value: float) -> bytes:
    return np.asarray([value], dtype='<f8').tobytes()


def f32_array(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype='<f4').tobytes()


def f64_array(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype='<f8').tobytes()


def u32_array(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype='<u4').tobytes()


def u64_array(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype='<u8').tobytes()


def u8_array(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype='u1').tobytes()


def header(magic: bytes, version: int) -> bytes:
    return magic + u32(version)


def write_atomic(path: str | os.PathLike, chunks: list[bytes]) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f'.{target.name}.', dir=target.parent)
    try:
        with os.fdopen(fd, 'wb') as f:
            for chunk in chunks:
                f.write(chunk)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
