"""Seeded random streams.

Every independent unit of work (EM restart, simulation replicate, bootstrap
path) gets its own generator derived from ``(seed, index)`` through
:class:`numpy.random.SeedSequence` spawn keys, so results never depend on
scheduling or worker count.
"""

import numpy as np


def stream(seed, *index):
    """Return the generator for ``seed`` and the (possibly nested) ``index``.

    ``stream(7)`` and ``stream(7, 0)`` are different streams; ``stream(7, 3)``
    is the same object-state every time it is constructed.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(i) for i in index))
    return np.random.default_rng(seq)


def as_generator(rng_or_seed):
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    return stream(rng_or_seed)
