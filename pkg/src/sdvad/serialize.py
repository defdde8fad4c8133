"""Binary tensor container used for every model kind.

Layout (little-endian)::

    b"SDVD"  u32 version=1  u32 n_tensors
    per tensor: u16 name_len, name (UTF-8), u8 rank, rank x u32 dims, float32 values

Values are stored as float32, so a round trip is exact for parameters that are
already float32-representable; trainers call :func:`to_float32_grid` before
saving.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"SDVD"
VERSION = 1


def to_float32_grid(arr) -> np.ndarray:
    """Round to the nearest float32 value but keep float64 storage."""
    return np.asarray(arr, dtype=np.float64).astype(np.float32).astype(np.float64)


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw_name = name.encode("utf-8")
        if arr.ndim > 255:
            raise FormatError(f"tensor {name!r} has too many dimensions")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.source}: truncated at offset {self.pos} while reading {what} "
                f"(need {n} bytes, {len(self.data) - self.pos} left)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(data: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    rd = _Reader(data, source)
    magic = rd.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    version, count = rd.unpack("<II", "header")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version} at offset 4, expected {VERSION}")
    tensors = {}
    for i in range(count):
        (name_len,) = rd.unpack("<H", f"name length of tensor {i}")
        offset = rd.pos
        try:
            name = rd.take(name_len, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{source}: tensor {i} name at offset {offset} is not UTF-8") from None
        (rank,) = rd.unpack("<B", f"rank of {name!r}")
        dims = rd.unpack(f"<{rank}I", f"dims of {name!r}")
        size = int(np.prod(dims, dtype=np.int64))
        raw = rd.take(4 * size, f"values of {name!r}")
        if name in tensors:
            raise FormatError(f"{source}: duplicate tensor {name!r} at offset {offset}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)
    if rd.pos != len(data):
        raise FormatError(f"{source}: {len(data) - rd.pos} trailing bytes at offset {rd.pos}")
    return tensors


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(tensors))


def load_tensors(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes(), str(path))


def require(tensors: dict, name: str, ndim: int | None = None, source: str = "model") -> np.ndarray:
    if name not in tensors:
        raise FormatError(f"{source}: missing tensor {name!r}")
    arr = tensors[name]
    if ndim is not None and arr.ndim != ndim:
        raise FormatError(f"{source}: tensor {name!r} has rank {arr.ndim}, expected {ndim}")
    return arr
