"""Reproducible random streams for replicated experiments.

Every replicate gets a Philox4x64 generator keyed by ``(master, replicate)``.
Philox is a counter-based construction, so distinct keys give unrelated
streams and the mapping never depends on how many replicates were drawn
before. The key layout (master in the high 64 bits, replicate index in the
low 64 bits) is part of the output format and must not change.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def seed_stream(master: int, replicate: int = 0) -> np.random.Generator:
    if master < 0 or replicate < 0:
        raise ValueError("seeds and replicate indices must be nonnegative")
    key = ((int(master) & _MASK64) << 64) | (int(replicate) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return seed_stream(int(rng), 0)
