"""FTKR binary tensor container.

Layout (all integers little-endian):

    magic   4 bytes  b"FTKR"
    version u32      currently 1
    count   u32      number of tensors
    per tensor:
        name_len u32
        name     UTF-8, name_len bytes
        rank     u32
        dims     u32 * rank
        dtype    u8   (1 = float32, 2 = float64)
        payload  row-major, little-endian, prod(dims) elements

Round-trips are lossless for float64; float32 payloads are widened to
float64 on read.  Malformed files raise distinct error types.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FTKR"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class FtkrError(Exception):
    """Base class for container format errors."""


class BadMagicError(FtkrError):
    pass


class TruncatedPayloadError(FtkrError):
    pass


class DuplicateNameError(FtkrError):
    pass


class UnsupportedDtypeError(FtkrError):
    pass


def write_ftkr(tensors: dict[str, np.ndarray], path) -> None:
    """Write named tensors; float32 stays float32, everything else is
    stored as float64."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        a = np.asarray(arr)
        if a.dtype not in _CODES:
            a = a.astype(np.float64)
        code = _CODES[a.dtype]
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(struct.pack("<B", code))
        chunks.append(np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]


def read_ftkr(path) -> dict[str, np.ndarray]:
    """Read a container; float32 payloads are widened to float64."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagicError(f"not an FTKR file: {path}")
    version = r.u32()
    if version != VERSION:
        raise FtkrError(f"unsupported version {version}")
    count = r.u32()
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        if name in out:
            raise DuplicateNameError(f"tensor {name!r} appears twice")
        rank = r.u32()
        dims = tuple(r.u32() for _ in range(rank))
        code = r.u8()
        if code not in _DTYPES:
            raise UnsupportedDtypeError(f"unknown dtype code {code}")
        dt = _DTYPES[code]
        n_elem = 1
        for d in dims:
            n_elem *= d
        payload = r.take(n_elem * dt.itemsize)
        arr = np.frombuffer(payload, dtype=dt).reshape(dims)
        out[name] = arr.astype(np.float64)
    return out
