"""Binary container for checkpoints and datasets.

Layout, all little-endian::

    b"TVQV"  u16 version  u32 entry_count
    per entry: u32 name_len, name (utf-8), u32 rank, u32 dims[rank], f32 data[prod(dims)]
    u32 crc32 of every preceding byte

Every value is stored as float32, so integer arrays round-trip exactly only
below 2**24.
"""
from __future__ import annotations

import os
import struct
import zlib

import numpy as np

from .errors import ChecksumError, InvalidArgumentError

MAGIC = b"TVQV"
VERSION = 1
_INT_EXACT = 2 ** 24


def encode(entries: dict[str, np.ndarray], version: int = VERSION) -> bytes:
    if not 0 <= version < 2 ** 16:
        raise InvalidArgumentError(f"version must fit in 16 bits, got {version}")
    parts = [MAGIC, struct.pack("<HI", version, len(entries))]
    for name, value in entries.items():
        arr = np.asarray(value)
        if arr.dtype.kind in "iub" and arr.size and np.abs(arr.astype(np.int64)).max() >= _INT_EXACT:
            raise InvalidArgumentError(f"{name}: integers beyond 2**24 do not survive float32 storage")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ChecksumError(f"container truncated at byte {self.pos} (needed {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], int]:
    """Parse a container, returning ``(entries, version)``.

    The checksum is verified before anything else is interpreted.
    """
    if len(blob) < len(MAGIC) + 10:
        raise ChecksumError(f"container too short ({len(blob)} bytes)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("checksum mismatch: container is corrupted")
    if body[:4] != MAGIC:
        raise ChecksumError(f"bad magic {body[:4]!r}, expected {MAGIC!r}")
    r = _Reader(body)
    r.pos = 4
    version, count = struct.unpack("<HI", r.take(6))
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        n = int(np.prod(dims, dtype=np.int64))
        entries[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(body):
        raise ChecksumError(f"{len(body) - r.pos} trailing bytes after the declared entries")
    return entries, version


def write(path, entries: dict[str, np.ndarray], version: int = VERSION) -> None:
    blob = encode(entries, version)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def read(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode(fh.read())[0]
