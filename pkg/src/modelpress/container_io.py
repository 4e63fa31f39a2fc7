"""Binary tensor container: the on-disk format for checkpoints and stats.

Layout (all integers little-endian):

    magic     4 bytes  b"OPSC"
    version   u32      1
    meta_len  u32
    metadata  meta_len bytes, UTF-8 "key=value\\n" lines
    n_tensors u32
    per tensor:
        name_len u32
        name     UTF-8 bytes
        dtype    u8   (0 = float32)
        rank     u8   (always 2; vectors are stored 1 x n)
        dims     rank x u64
        payload  float32 little-endian, row-major

Round trips are bitwise: save followed by load reproduces every byte of
every tensor.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"OPSC"
VERSION = 1
DTYPE_F32 = 0

__all__ = ["FormatError", "write_container", "read_container"]


class FormatError(ValueError):
    """Malformed container file; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def write_container(path, metadata: dict, tensors: dict) -> None:
    """Write ``tensors`` (name -> 2-D float32 array) with key=value metadata.

    Tensor and metadata entries are written in dict insertion order, so a
    given in-memory container always serializes to identical bytes.
    """
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    for key, value in metadata.items():
        if "=" in str(key) or "\n" in str(key) or "\n" in str(value):
            raise ValueError(f"metadata entry {key!r}={value!r} breaks the key=value line format")
    meta = "".join(f"{k}={v}\n" for k, v in metadata.items()).encode("utf-8")
    blob += struct.pack("<I", len(meta))
    blob += meta
    blob += struct.pack("<I", len(tensors))
    for name, tensor in tensors.items():
        arr = np.ascontiguousarray(tensor, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"tensor {name!r} must be 2-D, got shape {arr.shape}")
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<BB", DTYPE_F32, 2)
        blob += struct.pack("<QQ", arr.shape[0], arr.shape[1])
        blob += arr.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file while reading {what}", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]


def read_container(path) -> tuple[dict, dict]:
    """Read a container file, returning (metadata, tensors).

    Metadata values come back as strings; tensors as 2-D float32 arrays.
    Raises FormatError with the offending byte offset on bad magic, bad
    version, or truncation.
    """
    data = Path(path).read_bytes()
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    version_at = r.pos
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", version_at)
    meta_len = r.u32("metadata length")
    meta_at = r.pos
    try:
        meta_text = r.take(meta_len, "metadata").decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("metadata is not valid UTF-8", meta_at) from None
    metadata = {}
    for line in meta_text.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"metadata line {line!r} is not key=value", meta_at)
        key, _, value = line.partition("=")
        metadata[key] = value
    n_tensors = r.u32("tensor count")
    tensors = {}
    for i in range(n_tensors):
        name_len = r.u32(f"tensor {i} name length")
        name_at = r.pos
        try:
            name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"tensor {i} name is not valid UTF-8", name_at) from None
        dtype_at = r.pos
        dtype = r.u8(f"tensor {name!r} dtype")
        if dtype != DTYPE_F32:
            raise FormatError(f"tensor {name!r} has unknown dtype {dtype}", dtype_at)
        rank_at = r.pos
        rank = r.u8(f"tensor {name!r} rank")
        if rank != 2:
            raise FormatError(f"tensor {name!r} has rank {rank}, expected 2", rank_at)
        rows = r.u64(f"tensor {name!r} rows")
        cols = r.u64(f"tensor {name!r} cols")
        payload = r.take(rows * cols * 4, f"tensor {name!r} payload")
        arr = np.frombuffer(payload, dtype="<f4").reshape(rows, cols)
        tensors[name] = arr.astype(np.float32)
    return metadata, tensors
