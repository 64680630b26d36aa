"""Seeded generators for any signed 64-bit seed."""

import numpy as np

SEED_MASK = 2 ** 64 - 1


def rng_from_seed(seed: int) -> np.random.Generator:
    """Generator for ``seed`` taken modulo 2**64; non-negative seeds map to themselves."""
    return np.random.default_rng(int(seed) & SEED_MASK)
