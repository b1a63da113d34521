"""Seeded random streams.

Every random draw in the package comes from numpy's ``Philox`` bit generator
(Philox4x64-10, a counter-based PRNG from Salmon et al., "Parallel random
numbers: as easy as 1, 2, 3", SC'11). Output depends only on the 128-bit key
and the counter, never on the platform.

A stream is keyed by ``seed | (stream_id << 64)`` so independent consumers
(feature embedding, sampling, weight init, shuffling) never share draws.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# stream identifiers; keep stable, changing one changes every artifact
EMBEDDING = 1
SAMPLES = 2
SPLIT = 3
INIT = 4
SHUFFLE = 5
SYNTHETIC = 6


def stream(seed: int, stream_id: int) -> np.random.Generator:
    """Return a generator for ``(seed, stream_id)``.

    ``seed`` must fit in an unsigned 64-bit integer.
    """
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    key = seed | (int(stream_id) << 64)
    return np.random.Generator(np.random.Philox(key=key))
