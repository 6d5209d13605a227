"""Seeding.

Every random stream is a ``numpy.random.Generator`` over ``PCG64``.  The
integer handed to ``PCG64`` is derived from a 64-bit master seed and a
stream number with the SplitMix64 finalizer::

    x = (seed + (stream + 1) * 0x9E3779B97F4A7C15) mod 2**64
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB mod 2**64
    x = x ^ (x >> 31)

Replicate ``r`` of a run always uses stream ``r``, whatever the number of
worker threads, so merged results do not depend on scheduling.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def stream_seed(seed: int, stream: int = 0) -> int:
    """64-bit seed of stream ``stream`` under master seed ``seed``."""
    if seed < 0 or seed > MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    if stream < 0:
        raise ValueError(f"stream must be nonnegative, got {stream}")
    return splitmix64(seed + (stream + 1) * GOLDEN_GAMMA)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(stream_seed(seed, stream)))
