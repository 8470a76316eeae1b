"""Deterministic random-stream derivation.

Every random draw in the toolkit flows from one user seed through
`SeedSequence` spawn keys, so independent concerns (dataset generation,
weight init, epoch shuffling, test-time jitter) get decorrelated streams
that stay bitwise reproducible and never depend on call order.
"""

import numpy as np

# Purpose tags keep streams disjoint even when the same seed is reused
# for data generation and training.
STREAM_DATA = 0
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_TTA = 3

_SEED_MASK = (1 << 64) - 1


def seed_sequence(seed: int, *path: int) -> np.random.SeedSequence:
    """A SeedSequence for `seed` qualified by a tuple of stream indices."""
    return np.random.SeedSequence(entropy=seed & _SEED_MASK, spawn_key=tuple(path))


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """A Generator on the stream identified by (seed, *path)."""
    return np.random.default_rng(seed_sequence(seed, *path))
