"""Deterministic random-stream management for parallel Monte Carlo.

Samples are organized in fixed-size blocks.  Each block owns an
independent generator derived from (master_seed, run_key, block_index)
through numpy's SeedSequence spawning mechanism, so the random numbers
consumed by block k never depend on how many worker processes exist or
which worker picks the block up.  Reductions walk blocks in index order
and merge per-block moment summaries sequentially, which makes every
estimate byte-stable across worker counts.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

# Number of outer samples per block.  Fixed constant: changing it would
# change which sample lands in which stream and therefore the output of
# every seeded run.
BLOCK_SIZE = 1024


def run_key(*parts) -> int:
    """Stable 64-bit key identifying one estimator run.

    Parts are rendered with repr, so floats contribute their shortest
    round-trip form and the key is reproducible across processes
    (hashlib is not salted, unlike Python's built-in hash).
    """
    text = "|".join(repr(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def block_stream(master_seed: int, key: int, block_index: int) -> np.random.Generator:
    """Generator for one block, independent of all other blocks."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(key, block_index))
    return np.random.default_rng(seq)


def block_ranges(n_total: int, block_size: int = BLOCK_SIZE):
    """Yield (block_index, size) covering n_total samples."""
    if n_total <= 0:
        raise ValueError("n_total must be positive")
    out = []
    start = 0
    index = 0
    while start < n_total:
        size = min(block_size, n_total - start)
        out.append((index, size))
        start += size
        index += 1
    return out


@dataclass
class MomentSummary:
    """Count, mean and centered second moment of a sample batch."""

    count: int
    mean: float
    m2: float

    @classmethod
    def from_samples(cls, values: np.ndarray) -> "MomentSummary":
        n = int(values.size)
        if n == 0:
            return cls(0, 0.0, 0.0)
        mean = float(np.mean(values))
        m2 = float(np.sum((values - mean) ** 2))
        return cls(n, mean, m2)

    def merge(self, other: "MomentSummary") -> "MomentSummary":
        """Chan et al. pairwise update; applied in block order."""
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return MomentSummary(n, mean, m2)

    @property
    def variance(self) -> float:
        if self.count < 2:
            return 0.0
        return self.m2 / (self.count - 1)

    @property
    def std_error(self) -> float:
        if self.count < 2:
            return 0.0
        return float(np.sqrt(self.variance / self.count))


def merge_summaries(summaries) -> MomentSummary:
    """Merge block summaries in the order given (callers pass block order)."""
    total = MomentSummary(0, 0.0, 0.0)
    for s in summaries:
        total = total.merge(s)
    return total
