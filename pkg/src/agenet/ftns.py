"""FTNS tensor file format.

Layout: magic ``FTNS``, version u32 LE, dtype code u8 (1=float32,
2=float64), rank u8, dims as u64 LE each, then raw row-major LE scalars.
"""

import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"FTNS"
VERSION = 1

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class FtnsError(Exception):
    """Corrupt or malformed FTNS data."""


def write_tensor(fh: BinaryIO, array: np.ndarray) -> None:
    # note: np.ascontiguousarray would promote 0-d arrays to shape (1,)
    arr = np.asarray(array, order="C")
    if arr.dtype not in _CODE_FOR:
        raise FtnsError(f"unsupported dtype {arr.dtype}; expected float32/float64")
    fh.write(MAGIC)
    fh.write(struct.pack("<I", VERSION))
    fh.write(struct.pack("<BB", _CODE_FOR[arr.dtype], arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<Q", dim))
    fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise FtnsError(f"bad magic {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4))
    if version != VERSION:
        raise FtnsError(f"unsupported version {version}")
    code, rank = struct.unpack("<BB", _read_exact(fh, 2))
    if code not in _DTYPE_CODES:
        raise FtnsError(f"unknown dtype code {code}")
    dtype = _DTYPE_CODES[code]
    shape = tuple(
        struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(rank)
    )
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(fh, count * dtype.itemsize)
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def save(path, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FtnsError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data
