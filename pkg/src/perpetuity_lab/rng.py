"""Seed handling. Stream ``i`` of master seed ``s`` is SeedSequence([s, i])."""
import os

import numpy as np

DEFAULT_SEED = 0x5EED
SEED_ENV = "PERPETUITY_LAB_SEED"


def stream(seed, i=0):
    """Generator for stream ``i`` derived from the master ``seed``."""
    if seed is None:
        seed = DEFAULT_SEED
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(i)]))


def resolve_seed(seed=None):
    """Environment override first, then the given seed, then the default."""
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        return int(env, 0)
    return DEFAULT_SEED if seed is None else int(seed)
