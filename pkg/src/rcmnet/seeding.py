"""Named sub-seeds derived from one run seed."""

import numpy as np

SUBSEEDS = {"init": 0, "shuffle": 1, "balance": 2, "synth": 3, "split": 4, "head": 5}


def derive_seed(seed: int, purpose: str) -> int:
    """Independent 32-bit seed for ``purpose`` (one of :data:`SUBSEEDS`)."""
    return int(np.random.SeedSequence([int(seed), SUBSEEDS[purpose]]).generate_state(1)[0])


def rng_for(seed: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, purpose))
