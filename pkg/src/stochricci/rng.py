"""Reproducible Gaussian streams keyed by (seed, stream_id).

Each stream is a counter-based Philox generator whose key is derived with
``SeedSequence(seed, spawn_key=(stream_id,))``.  Monte Carlo loops assign one
stream per fixed-size block of paths, so results do not depend on how blocks
are scheduled across worker threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Sequence, TypeVar

import numpy as np

BLOCK_SIZE = 2048

T = TypeVar("T")


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(ss))

    def normal(self, size) -> np.ndarray:
        return self.generator().normal(size=size)


def block_sizes(M: int, block: int = BLOCK_SIZE) -> List[int]:
    full, rest = divmod(M, block)
    return [block] * full + ([rest] if rest else [])


def run_blocks(fn: Callable[[int, int, np.random.Generator], T], M: int, seed: int,
               threads: int = 1, block: int = BLOCK_SIZE, stream_offset: int = 0) -> List[T]:
    """Call ``fn(block_index, size, generator)`` for each block of M paths.

    Block b always draws from stream ``stream_offset + b``; results come back
    in block order whatever the thread count.
    """
    sizes = block_sizes(M, block)

    def one(b: int):
        return fn(b, sizes[b], RngStream(seed, stream_offset + b).generator())

    if threads <= 1 or len(sizes) == 1:
        return [one(b) for b in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(len(sizes))))


def concat(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.atleast_1d(p) for p in parts])
