"""Deterministic random streams.

Every stream is a Philox generator keyed by a tuple of non-negative integers,
so ``derive(seed, worker, trial)`` gives the same numbers no matter which
process asks for it or in what order.
"""

from __future__ import annotations

import numpy as np


def derive(*key: int) -> np.random.Generator:
    """Return an independent generator for the integer path ``key``."""
    if not key:
        raise ValueError("derive() needs at least one key component")
    words = [int(k) for k in key]
    if any(k < 0 for k in words):
        raise ValueError(f"seed components must be non-negative, got {key}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def as_generator(seed) -> tuple[np.random.Generator, int | None]:
    """Normalise a seed argument into ``(generator, recorded_seed)``.

    Integers are recorded for provenance; generators are used as-is and the
    recorded seed is ``None``.
    """
    if isinstance(seed, np.random.Generator):
        return seed, None
    if seed is None:
        raise ValueError("an explicit seed or generator is required")
    seed = int(seed)
    return derive(seed), seed


def partition(count: int, workers: int) -> list[range]:
    """Split ``range(count)`` into ``workers`` contiguous, nearly equal blocks."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    base, extra = divmod(count, workers)
    out, start = [], 0
    for w in range(workers):
        size = base + (1 if w < extra else 0)
        out.append(range(start, start + size))
        start += size
    return out
