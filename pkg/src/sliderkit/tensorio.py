"""Portable binary container for named tensors.

Layout: a fixed magic, a JSON metadata blob, then one record per tensor
holding {utf-8 name, dtype tag, shape, row-major little-endian payload}.
Checksums are intentionally not embedded; manifests store a sha256 per
file so corruption is caught at load time by the owner of the reference.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from typing import Any, Mapping

import numpy as np

from .errors import ParseError

MAGIC = b"TRC1"

_DTYPE_TAGS = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<i8"): 3,
    np.dtype("<i4"): 4,
}
_TAG_DTYPES = {tag: dtype for dtype, tag in _DTYPE_TAGS.items()}


def dump_tensors(tensors: Mapping[str, np.ndarray], metadata: Mapping[str, Any] | None = None) -> bytes:
    """Serialize named arrays (and an optional JSON metadata blob) to bytes."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    meta_bytes = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(tensors)))
    for name, array in tensors.items():
        arr = np.ascontiguousarray(array)
        dtype = arr.dtype.newbyteorder("<")
        if dtype not in _DTYPE_TAGS:
            raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<BB", _DTYPE_TAGS[dtype], arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(arr.astype(dtype, copy=False).tobytes(order="C"))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise ParseError(
                f"truncated tensor record: wanted {n} bytes at offset {self._pos}, "
                f"have {len(self._data) - self._pos}"
            )
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def exhausted(self) -> bool:
        return self._pos == len(self._data)


def load_tensors(data: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Parse bytes produced by dump_tensors. Raises ParseError on any damage."""
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise ParseError("bad magic: not a tensor-record container")
    (meta_len,) = reader.unpack("<I")
    try:
        metadata = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"corrupt metadata block: {exc}") from exc
    (count,) = reader.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        tag, ndim = reader.unpack("<BB")
        if tag not in _TAG_DTYPES:
            raise ParseError(f"unknown dtype tag {tag} for tensor {name!r}")
        shape = tuple(reader.unpack("<" + "Q" * ndim)) if ndim else ()
        dtype = _TAG_DTYPES[tag]
        n_items = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = reader.take(n_items * dtype.itemsize)
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if not reader.exhausted:
        raise ParseError("trailing bytes after last tensor record")
    return tensors, metadata


def write_tensor_file(path, tensors: Mapping[str, np.ndarray], metadata: Mapping[str, Any] | None = None) -> str:
    """Write a container to disk and return its sha256 hex digest."""
    data = dump_tensors(tensors, metadata)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def read_tensor_file(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    with open(path, "rb") as fh:
        return load_tensors(fh.read())


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
