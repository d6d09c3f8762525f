"""Stable hashing helpers shared across the package."""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes, seed: int = 0) -> int:
    """Seeded 64-bit FNV-1a. Pure function of (data, seed)."""
    h = _FNV_OFFSET ^ (seed & _MASK64)
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def array_digest(*arrays: np.ndarray) -> str:
    """SHA-256 over the dtype, shape, and raw bytes of the given arrays."""
    md = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        md.update(str(a.dtype).encode("ascii"))
        md.update(str(a.shape).encode("ascii"))
        md.update(a.tobytes())
    return md.hexdigest()


def file_digest(path) -> str:
    md = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            md.update(chunk)
    return md.hexdigest()
