"""OODT tensor files.

Layout (little-endian)::

    b"OODT" | version u8 = 1 | dtype u8 | rank u8 | reserved u8 = 0
    rank x u32 dims
    row-major payload

dtype 0 is float32 (tensors), dtype 1 is uint8 (binary label vectors/masks).
Tensors are plain numpy arrays; the helpers here only enforce the format
invariants (rank >= 1, every dim >= 1, labels in {0, 1}).
"""

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError, SizeMismatchError

MAGIC = b"OODT"
VERSION = 1
DTYPE_F32 = 0
DTYPE_U8 = 1

_HEADER = struct.Struct("<4sBBBB")
_NP_DTYPES = {DTYPE_F32: np.dtype("<f4"), DTYPE_U8: np.dtype("u1")}


def as_tensor(values) -> np.ndarray:
    """Coerce ``values`` to a valid float32 tensor, rejecting empty shapes."""
    arr = np.asarray(values, dtype=np.float32)
    _check_shape(arr.shape)
    return np.ascontiguousarray(arr)


def as_labels(values) -> np.ndarray:
    arr = np.asarray(values)
    _check_shape(arr.shape)
    if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("labels must be 0 or 1")
    if not np.all((arr == 0) | (arr == 1)):
        raise InvalidArgumentError("labels must be 0 or 1")
    return np.ascontiguousarray(arr, dtype=np.uint8)


def _check_shape(shape):
    if len(shape) < 1:
        raise InvalidArgumentError("tensor rank must be >= 1")
    if len(shape) > 255:
        raise InvalidArgumentError("tensor rank must be <= 255")
    if any(d < 1 for d in shape):
        raise InvalidArgumentError(f"tensor dims must be >= 1, got {tuple(shape)}")


def encode(arr: np.ndarray, dtype_code: int) -> bytes:
    dt = _NP_DTYPES[dtype_code]
    header = _HEADER.pack(MAGIC, VERSION, dtype_code, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + dims + np.ascontiguousarray(arr, dtype=dt).tobytes()


def decode(buf: bytes, expect_dtype: int | None = None) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise SizeMismatchError("header", f"need {_HEADER.size} bytes, got {len(buf)}")
    magic, version, dtype_code, rank, reserved = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError("magic", f"expected {MAGIC!r}, got {magic!r}")
    if version != VERSION:
        raise FormatError("version", f"unsupported version {version}")
    if dtype_code not in _NP_DTYPES:
        raise FormatError("dtype", f"unknown dtype code {dtype_code}")
    if expect_dtype is not None and dtype_code != expect_dtype:
        raise FormatError("dtype", f"expected dtype code {expect_dtype}, got {dtype_code}")
    if rank < 1:
        raise FormatError("rank", "rank must be >= 1")
    if reserved != 0:
        raise FormatError("reserved", f"reserved byte must be 0, got {reserved}")
    offset = _HEADER.size
    if len(buf) < offset + 4 * rank:
        raise SizeMismatchError("dims", "file truncated inside dims")
    shape = struct.unpack_from(f"<{rank}I", buf, offset)
    if any(d < 1 for d in shape):
        raise FormatError("dims", f"dims must be >= 1, got {shape}")
    offset += 4 * rank
    dt = _NP_DTYPES[dtype_code]
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    actual = len(buf) - offset
    if actual != expected:
        raise SizeMismatchError("payload", f"expected {expected} payload bytes, got {actual}")
    arr = np.frombuffer(buf, dtype=dt, offset=offset).reshape(shape)
    return arr.astype(dt.newbyteorder("="), copy=True)


def write_tensor(t, path) -> None:
    Path(path).write_bytes(encode(as_tensor(t), DTYPE_F32))


def read_tensor(path) -> np.ndarray:
    return decode(Path(path).read_bytes(), expect_dtype=DTYPE_F32)


def write_labels(v, path) -> None:
    Path(path).write_bytes(encode(as_labels(v), DTYPE_U8))


def read_labels(path) -> np.ndarray:
    arr = decode(Path(path).read_bytes(), expect_dtype=DTYPE_U8)
    if np.any(arr > 1):
        raise InvalidArgumentError(f"{path}: label values must be 0 or 1")
    return arr


def write_csv(t, path) -> None:
    """Write a rank-1 (one value per line) or rank-2 tensor as CSV."""
    arr = as_tensor(t)
    if arr.ndim > 2:
        raise InvalidArgumentError("CSV export supports rank 1 and 2 only")
    rows = arr.reshape(-1, 1) if arr.ndim == 1 else arr
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in rows:
            # repr of a float32 widened to float64 round-trips exactly
            writer.writerow([repr(float(x)) for x in row])


def read_csv(path, rank: int = 2) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(x) for x in row] for row in csv.reader(fh) if row]
    if not rows:
        raise InvalidArgumentError(f"{path}: empty CSV")
    if len({len(r) for r in rows}) != 1:
        raise InvalidArgumentError(f"{path}: ragged CSV rows")
    arr = as_tensor(rows)
    if rank == 1:
        return arr.reshape(-1)
    return arr
