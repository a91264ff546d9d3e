"""
Named random streams.

All randomness comes from numpy's PCG64 generator seeded through a
SeedSequence whose spawn key is (stream tag, *keys). Streams are independent
of the order in which they are requested.
"""
import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def stable_key(key: Key) -> int:
    """Map a stream key to a non-negative integer, stable across runs."""
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def stream(seed: int, *keys: Key) -> np.random.Generator:
    """Return the generator for stream (seed, *keys)."""
    sequence = np.random.SeedSequence(
        entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=tuple(stable_key(k) for k in keys),
    )
    return np.random.Generator(np.random.PCG64(sequence))
