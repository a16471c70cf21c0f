"""
Deterministic random streams. Every random draw in ReasonIQ goes through seeded_rng.
"""

import hashlib

import numpy as np


def _stream_words(stream: str) -> list:
    digest = hashlib.sha256(stream.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def seeded_rng(seed: int, stream: str) -> np.random.Generator:
    """
    Return an independent generator for the (seed, stream) pair.

    The stream label is hashed with SHA-256 so the mapping does not depend on
    PYTHONHASHSEED; identical inputs reproduce identical draws across runs.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    entropy = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF] + _stream_words(stream)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def child_rngs(rng: np.random.Generator, count: int) -> list:
    """Derive `count` child generators from a parent, in a fixed order."""
    seeds = rng.integers(0, 2**63 - 1, size=count, dtype=np.int64)
    return [np.random.default_rng(int(s)) for s in seeds]
