"""Counter-based random streams.

Every stochastic operation receives its randomness through :func:`stream`,
keyed by a seed plus any number of integer indices (pass number, layer,
realization...).  Philox is counter based, so two streams with different
keys never overlap and results do not depend on evaluation order.
"""

import numpy as np


def stream(seed, *keys):
    """Return an independent generator for ``(seed, *keys)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) & 0xFFFFFFFF for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def as_generator(rng):
    """Accept a Generator or an int seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(rng)
