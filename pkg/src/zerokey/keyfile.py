"""Binary verification-key files.

Layout (little-endian)::

    offset  size  field
    0       4     magic b"NIMK"
    4       1     version (1)
    5       2     C'
    7       2     H'
    9       2     W'
    11      4     L
    15      32    SHA-256 digest of the codec weights
    47      n     key bits, row-major, packed MSB first, n = ceil(C'H'W' / 8)
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["VerificationKey", "KeyFormatError", "DigestMismatch", "dumps", "loads", "save", "load"]

MAGIC = b"NIMK"
VERSION = 1
_HEADER = struct.Struct("<4sBHHHI32s")


class KeyFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DigestMismatch(ValueError):
    pass


@dataclass
class VerificationKey:
    bits: np.ndarray  # uint8 in {0, 1}, shape (C', H', W')
    length: int
    digest: bytes

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 3:
            raise ValueError(f"key bits must be (C', H', W'), got shape {self.bits.shape}")
        if self.bits.size and self.bits.max() > 1:
            raise ValueError("key bits must be binary")
        if len(self.digest) != 32:
            raise ValueError("digest must be 32 bytes")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.bits.shape)

    def check_digest(self, digest: bytes) -> None:
        if digest != self.digest:
            raise DigestMismatch("key was generated by different weights")


def dumps(key: VerificationKey) -> bytes:
    c, h, w = key.shape
    header = _HEADER.pack(MAGIC, VERSION, c, h, w, key.length, key.digest)
    return header + np.packbits(key.bits.reshape(-1), bitorder="big").tobytes()


def loads(data: bytes) -> VerificationKey:
    if len(data) < 4 or data[:4] != MAGIC:
        raise KeyFormatError("bad magic, not a key file", 0)
    if len(data) < _HEADER.size:
        raise KeyFormatError("truncated header", len(data))
    _, version, c, h, w, length, digest = _HEADER.unpack_from(data)
    if version != VERSION:
        raise KeyFormatError(f"unsupported key version {version}", 4)
    if c == 0 or h == 0 or w == 0:
        raise KeyFormatError("zero-sized key dimensions", 5)
    count = c * h * w
    nbytes = -(-count // 8)
    payload = data[_HEADER.size:]
    if len(payload) != nbytes:
        raise KeyFormatError(f"expected {nbytes} payload bytes, found {len(payload)}", _HEADER.size)
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="big")
    if bits[count:].any():
        raise KeyFormatError("nonzero padding bits", _HEADER.size + nbytes - 1)
    return VerificationKey(bits[:count].reshape(c, h, w), length, bytes(digest))


def save(key: VerificationKey, path: str | os.PathLike) -> None:
    atomic_write(Path(path), dumps(key))


def load(path: str | os.PathLike) -> VerificationKey:
    return loads(Path(path).read_bytes())


def atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
