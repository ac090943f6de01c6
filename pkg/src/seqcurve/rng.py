"""Seeded, worker-count independent random streams.

Replicates are cut into fixed-size blocks. Block ``b`` always draws from the
``b``-th child of ``SeedSequence(seed)`` through a Philox (counter-based) bit
generator, so results depend only on the seed and the block size, never on
how many threads processed the blocks or in which order they finished.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

T = TypeVar("T")

BLOCK_SIZE = 500
THREADS_ENV = "SEQCURVE_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``$SEQCURVE_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def block_sizes(reps: int, block: int = BLOCK_SIZE) -> list[int]:
    if reps < 1:
        raise ValueError("need at least one replicate")
    full, rest = divmod(reps, block)
    return [block] * full + ([rest] if rest else [])


def generators(seed: int, n: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def run_blocks(
    fn: Callable[[np.random.Generator, int], T],
    reps: int,
    seed: int,
    threads: int | None = None,
    block: int = BLOCK_SIZE,
) -> list[T]:
    """Apply ``fn(rng, size)`` to every block; results come back in block order."""
    sizes = block_sizes(reps, block)
    rngs = generators(seed, len(sizes))
    n_threads = resolve_threads(threads)
    if n_threads == 1:
        return [fn(g, s) for g, s in zip(rngs, sizes)]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(fn, rngs, sizes))
