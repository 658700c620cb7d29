"""Counter-based random stream splitting.

Every random stream in the package is derived from a single master seed as::

    key = blake2b(master || label || index_0 || index_1 ...)[:16]
    stream = numpy.random.Generator(Philox(key=key))

``master`` and each index are encoded as unsigned 64-bit little-endian
integers, ``label`` as length-prefixed UTF-8. Streams therefore depend only on
*what* they are used for, never on the order in which they are requested, so
parallel evaluation cannot perturb the draws.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

U64_MASK = (1 << 64) - 1


def _key_bytes(master: int, label: str, indices: tuple[int, ...]) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(struct.pack("<Q", int(master) & U64_MASK))
    raw = label.encode("utf-8")
    h.update(struct.pack("<I", len(raw)))
    h.update(raw)
    for i in indices:
        h.update(struct.pack("<Q", int(i) & U64_MASK))
    return h.digest()


def derive_seed(master: int, label: str, *indices: int) -> int:
    """64-bit seed for the stream ``(master, label, *indices)``."""
    return int.from_bytes(_key_bytes(master, label, indices)[:8], "little")


def stream(master: int, label: str, *indices: int) -> np.random.Generator:
    """Independent generator for ``(master, label, *indices)``."""
    key = np.frombuffer(_key_bytes(master, label, indices), dtype="<u8")
    return np.random.Generator(np.random.Philox(key=key.astype(np.uint64)))


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return stream(int(rng), "default")
