"""
Counter-based random streams.

A stream is addressed by a root seed plus an integer key path, e.g.
``stream(seed, chain, step)``. Streams with different keys are statistically
independent and do not depend on the order in which they are created, so work
can be split across threads without changing any draw.
"""

from typing import Optional

import numpy as np

from flowgraph.core.config import settings

# Key-path prefixes for the different consumers of randomness.
DATASET = 0
TRAIN = 1
SAMPLE = 2
GUIDE = 3
CHECK = 4
INIT = 5


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the Philox generator for ``(seed, *key)``"""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def torch_seed(seed: int, *key: int) -> int:
    """Derive a 63-bit seed for torch generators from a stream address"""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def resolve_seed(seed: Optional[int]) -> int:
    """Apply the ``FLOWGRAPH_SEED`` override"""
    if settings.FLOWGRAPH_SEED is not None:
        return settings.FLOWGRAPH_SEED
    return 0 if seed is None else seed
