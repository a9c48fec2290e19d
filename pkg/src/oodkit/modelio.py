"""OODM model sidecar files.

Layout (little-endian)::

    b"OODM" | version u8 = 1 | kind u8 | reserved u16 = 0
    u32 meta_len | meta_len bytes of UTF-8 JSON (sorted keys, compact)
    u32 array_count
    array_count x record:
        u16 name_len | name (UTF-8)
        dtype u8 | rank u8 | rank x u32 dims | row-major payload

Array dtype codes: 0 float32, 1 uint8, 2 float64, 3 int64. Model parameters
are kept in float64 so a save/load cycle is exact.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, SizeMismatchError

MAGIC = b"OODM"
VERSION = 1

KIND_CLASSIFIER = 0
KIND_AUTOENCODER = 1
KIND_LOF = 2
KIND_IFOREST = 3
KIND_TEMPLATES = 4
KIND_NAMES = {
    KIND_CLASSIFIER: "classifier",
    KIND_AUTOENCODER: "autoencoder",
    KIND_LOF: "lof",
    KIND_IFOREST: "iforest",
    KIND_TEMPLATES: "templates",
}

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODES = {"f4": 0, "u1": 1, "f8": 2, "i8": 3}
_HEADER = struct.Struct("<4sBBH")


def _code_for(arr):
    key = f"{arr.dtype.kind}{arr.dtype.itemsize}"
    if key not in _CODES:
        raise TypeError(f"unsupported array dtype {arr.dtype}")
    return _CODES[key]


def dumps(kind: int, meta: dict, arrays: dict) -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_HEADER.pack(MAGIC, VERSION, kind, 0), struct.pack("<I", len(meta_bytes)), meta_bytes]
    parts.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if arr.ndim == 0:
            arr = arr.reshape(1)
        code = _code_for(arr)
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)) + name_b)
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def loads(buf: bytes, expect_kind: int | None = None):
    """Parse a sidecar, returning ``(kind, meta, arrays)``."""
    if len(buf) < _HEADER.size + 4:
        raise SizeMismatchError("header", "file too short")
    magic, version, kind, reserved = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError("magic", f"expected {MAGIC!r}, got {magic!r}")
    if version != VERSION:
        raise FormatError("version", f"unsupported version {version}")
    if kind not in KIND_NAMES:
        raise FormatError("kind", f"unknown model kind {kind}")
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(
            "kind", f"expected a {KIND_NAMES[expect_kind]} model, got {KIND_NAMES[kind]}"
        )
    if reserved != 0:
        raise FormatError("reserved", "reserved field must be 0")
    pos = _HEADER.size

    def take(n, field):
        nonlocal pos
        if pos + n > len(buf):
            raise SizeMismatchError(field, "file truncated")
        out = buf[pos:pos + n]
        pos += n
        return out

    (meta_len,) = struct.unpack("<I", take(4, "meta_len"))
    meta = json.loads(take(meta_len, "meta").decode("utf-8"))
    (count,) = struct.unpack("<I", take(4, "array_count"))
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name_len"))
        name = take(name_len, "name").decode("utf-8")
        code, rank = struct.unpack("<BB", take(2, "array_header"))
        if code not in _DTYPES:
            raise FormatError("dtype", f"unknown array dtype code {code}")
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        raw = take(nbytes, f"payload:{name}")
        arrays[name] = np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if pos != len(buf):
        raise SizeMismatchError("trailer", f"{len(buf) - pos} unexpected trailing bytes")
    return kind, meta, arrays


def save(path, kind: int, meta: dict, arrays: dict) -> None:
    Path(path).write_bytes(dumps(kind, meta, arrays))


def load(path, expect_kind: int | None = None):
    return loads(Path(path).read_bytes(), expect_kind)
