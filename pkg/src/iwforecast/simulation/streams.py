"""Counter-based random streams.

Each block of replications gets its own Philox generator keyed by
``(seed, preset, grid index, block index)``. Blocks have a fixed size, so the
numbers drawn never depend on how the work is scheduled across threads.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["BLOCK_SIZE", "block_rng", "block_sizes", "batch_means_se"]

BLOCK_SIZE = 10_000


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def block_rng(seed: int, preset: str, point: int, block: int) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_name_key(preset), int(point), int(block)))
    return np.random.Generator(np.random.Philox(ss))


def block_sizes(replications: int, block_size: int = BLOCK_SIZE) -> list[int]:
    if replications < 1:
        raise ValueError("replications must be >= 1")
    full, rest = divmod(replications, block_size)
    return [block_size] * full + ([rest] if rest else [])


def batch_means_se(x: np.ndarray, batches: int = 20) -> float:
    """Standard error of the mean of ``x`` from contiguous batch means.

    Returns nan when there are fewer observations than batches.
    """
    x = np.asarray(x, dtype=float)
    if x.size < batches or batches < 2:
        return float("nan")
    means = np.array([b.mean() for b in np.array_split(x, batches)])
    return float(means.std(ddof=1) / np.sqrt(batches))
