"""Deterministic per-replica random streams.

``seed_stream(base, i)`` feeds ``base + (i + 1) * 0x9E3779B97F4A7C15`` (mod
2^64) through the SplitMix64 finalizer::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

and seeds a PCG64 generator with the resulting 64-bit integer.  The map
``i -> seed`` is a bijection on 64-bit integers, so distinct replica indices
never share a seed.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(base_seed: int, index: int) -> int:
    """SplitMix64 output for replica ``index`` of stream ``base_seed``."""
    z = (int(base_seed) + (int(index) + 1) * GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def seed_stream(base_seed: int, replica_index: int) -> np.random.Generator:
    """Independent generator for one replica."""
    return np.random.Generator(np.random.PCG64(mix64(base_seed, replica_index)))
