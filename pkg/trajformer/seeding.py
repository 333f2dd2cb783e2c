"""
Named random substreams derived from one master seed.

Every random draw in the package (initialization, shuffling, Monte-Carlo
draws, sampling, synthetic scenes, dropout) comes from a generator built
here, so a run is fully determined by its master seed. Keys may be strings
(hashed with CRC-32) or non-negative integers; the same key path always
yields the same stream, independently of how many other streams exist.
"""

import zlib
from typing import Tuple

import numpy as np


def _key_to_int(key: str | int) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode('utf-8'))
    if key < 0:
        raise ValueError(f"Substream keys must be non-negative, got {key}")
    return int(key)


def substream_key(*keys: str | int) -> Tuple[int, ...]:
    """Convert a key path to the integer spawn key used by numpy."""
    return tuple(_key_to_int(key) for key in keys)


def substream(seed: int, *keys: str | int) -> np.random.Generator:
    """
    Build a generator for the substream `keys` of master seed `seed`.

    Args:
        seed: Master seed
        keys: Key path naming the substream, e.g. ("sample", scene, agent)

    Returns:
        A PCG64 generator seeded from the master seed and key path
    """
    sequence = np.random.SeedSequence(
        entropy=int(seed), spawn_key=substream_key(*keys))
    return np.random.Generator(np.random.PCG64(sequence))
