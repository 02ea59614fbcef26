"""Binary weights container.

Layout (all little-endian):

    magic   4 bytes  b"SFW1"
    version u32      currently 1
    count   u32      number of entries
    entry*  name_len u16, name UTF-8, rank u8, dims u32 x rank,
            raw float32 data (product(dims) values)
    trailer u64      sum of all preceding file bytes, mod 2^64

Loading is all-or-nothing: any malformed header, truncated entry, or
checksum mismatch raises ``FormatError`` naming the offending entry.
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import ParameterRegistry
from .errors import FormatError

MAGIC = b"SFW1"
VERSION = 1


def _byte_sum(buf: bytes) -> int:
    return int(np.frombuffer(buf, dtype=np.uint8).sum(dtype=np.uint64))


def save_weights(registry: ParameterRegistry, path) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(registry))]
    for p in registry:
        name = p.name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<B", p.ndim))
        chunks.append(struct.pack(f"<{p.ndim}I", *p.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    body = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<Q", _byte_sum(body) & 0xFFFFFFFFFFFFFFFF))


def load_weights(path) -> ParameterRegistry:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20:
        raise FormatError(f"{path}: file too short for header and trailer")
    body, trailer = raw[:-8], raw[-8:]
    (declared,) = struct.unpack("<Q", trailer)
    if declared != (_byte_sum(body) & 0xFFFFFFFFFFFFFFFF):
        raise FormatError(f"{path}: checksum mismatch")
    if body[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {body[:4]!r}")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 12
    reg = ParameterRegistry()
    for i in range(count):
        name = f"#{i}"
        try:
            (name_len,) = struct.unpack_from("<H", body, off)
            off += 2
            if off + name_len > len(body):
                raise struct.error("name truncated")
            name = body[off:off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", body, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", body, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            if off + 4 * n > len(body):
                raise struct.error("data truncated")
            data = np.frombuffer(body, dtype="<f4", count=n, offset=off)
            off += 4 * n
        except struct.error as exc:
            raise FormatError(f"{path}: truncated entry {name} ({exc})") from exc
        reg.add(name, data.reshape(dims).astype(np.float32))
    if off != len(body):
        raise FormatError(f"{path}: {len(body) - off} trailing bytes after last entry")
    return reg


def expected_file_size(registry: ParameterRegistry) -> int:
    """Exact on-disk size for a registry (header + entries + trailer)."""
    size = 4 + 4 + 4
    for p in registry:
        size += 2 + len(p.name.encode("utf-8")) + 1 + 4 * p.ndim + 4 * p.size
    return size + 8
