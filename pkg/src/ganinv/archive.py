"""HTA1 tensor archives and content hashing.

Layout (little-endian throughout):

    magic "HTA1"
    u32 record count
    per record: u16 name length, UTF-8 name, u8 dtype (0=f32, 1=f64),
                u8 ndim, ndim x u32 dims, row-major payload
    u64 FNV-1a checksum of every preceding byte

Writes go through a temp file and rename, so a crashed run never leaves
a half-written archive behind. f64 tensors round-trip losslessly; f32
tensors are written as stored.
"""

from __future__ import annotations

import os
import struct

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1

MAGIC = b"HTA1"


class ArchiveError(Exception):
    pass


def fnv1a64(data: bytes, h: int = FNV_OFFSET) -> int:
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK
    return h


def _encode_record(name: str, arr: np.ndarray) -> bytes:
    if arr.dtype == np.float32:
        dtype = 0
    elif arr.dtype == np.float64:
        dtype = 1
    else:
        raise ArchiveError(f"unsupported dtype {arr.dtype} for {name!r}")
    nb = name.encode("utf-8")
    if len(nb) > 0xFFFF:
        raise ArchiveError(f"name too long: {name!r}")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", dtype, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return head + np.ascontiguousarray(little).tobytes()


def archive_bytes(tensors: dict[str, np.ndarray]) -> bytes:
    names = list(tensors)
    if len(set(names)) != len(names):
        raise ArchiveError("duplicate tensor names")
    body = MAGIC + struct.pack("<I", len(names))
    for name in names:
        body += _encode_record(name, np.asarray(tensors[name]))
    return body + struct.pack("<Q", fnv1a64(body))


def archive_write(path, tensors: dict[str, np.ndarray]) -> None:
    data = archive_bytes(tensors)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def archive_read(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    return archive_parse(data)


def archive_parse(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < len(MAGIC) + 4 + 8:
        raise ArchiveError("archive truncated")
    if data[:4] != MAGIC:
        raise ArchiveError(f"bad magic {data[:4]!r}")
    body, (checksum,) = data[:-8], struct.unpack("<Q", data[-8:])
    if fnv1a64(body) != checksum:
        raise ArchiveError("checksum mismatch")
    (count,) = struct.unpack_from("<I", body, 4)
    pos = 8
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + nlen].decode("utf-8")
            pos += nlen
            dtype, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            dims = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            if dtype == 0:
                np_dtype, width = np.dtype("<f4"), 4
            elif dtype == 1:
                np_dtype, width = np.dtype("<f8"), 8
            else:
                raise ArchiveError(f"unknown dtype code {dtype} for {name!r}")
            n = 1
            for d in dims:
                n *= d
            payload = body[pos : pos + n * width]
            if len(payload) != n * width:
                raise ArchiveError(f"payload truncated for {name!r}")
            pos += n * width
        except struct.error:
            raise ArchiveError("archive truncated") from None
        if name in out:
            raise ArchiveError(f"duplicate tensor name {name!r}")
        out[name] = np.frombuffer(payload, dtype=np_dtype).reshape(dims).copy()
    if pos != len(body):
        raise ArchiveError(f"{len(body) - pos} trailing bytes after records")
    return out


def content_hash(tensors: dict[str, np.ndarray]) -> str:
    """Order-independent hash of named tensors (names sorted)."""
    h = FNV_OFFSET
    for name in sorted(tensors):
        h = fnv1a64(_encode_record(name, np.asarray(tensors[name])), h)
    return f"{h:016x}"


def encode_text(text: str) -> np.ndarray:
    """Text as an f64 byte-code tensor (archives carry only tensors)."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def decode_text(arr: np.ndarray) -> str:
    return np.asarray(arr, dtype=np.float64).astype(np.uint8).tobytes().decode("utf-8")
