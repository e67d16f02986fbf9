"""Reproducible random streams keyed by (master seed, index, stream tag).

Replicas are processed in fixed-size blocks; each block owns a Philox
generator whose key is derived from the master seed, the block index and a
stream tag.  Results therefore do not depend on how blocks are scheduled.
"""

from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

BLOCK_SIZE = 2048


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def seed_sequence(master_seed: int, index: int, tag: str) -> np.random.SeedSequence:
    if master_seed is None or int(master_seed) < 0:
        raise ValueError("a nonnegative master seed is required")
    return np.random.SeedSequence(int(master_seed), spawn_key=(tag_id(tag), int(index)))


def generator(master_seed: int, index: int, tag: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_sequence(master_seed, index, tag)))


def blocks(
    master_seed: int, n_replicas: int, tag: str, block_size: int = BLOCK_SIZE
) -> Iterator[tuple[int, int, np.random.Generator]]:
    """Yield (start, size, generator) for consecutive replica blocks."""
    if n_replicas < 1:
        raise ValueError(f"replica count must be positive, got {n_replicas}")
    for b, start in enumerate(range(0, n_replicas, block_size)):
        size = min(block_size, n_replicas - start)
        yield start, size, generator(master_seed, b, tag)


def replica_seeds(master_seed: int, n_replicas: int, tag: str) -> np.ndarray:
    """One 32-bit seed per replica for compiled per-replica samplers."""
    if n_replicas < 1:
        raise ValueError(f"replica count must be positive, got {n_replicas}")
    out = np.empty(n_replicas, dtype=np.int64)
    for start, size, rng in blocks(master_seed, n_replicas, tag):
        out[start : start + size] = rng.integers(0, 2**31 - 1, size=size)
    return out
