"""Counter-based random substreams.

Every random draw in the package comes from a Philox generator keyed by a
seed tuple plus a purpose tag and a step index.  Draws therefore depend only
on (seed, purpose, step), never on how many workers or threads consumed
earlier streams, which is what makes full runs reproducible and
worker-count independent.
"""

from __future__ import annotations

import numpy as np

SeedKey = int | tuple[int, ...]

# Purpose tags keep independent streams from colliding.
PROPOSAL = 0
RESAMPLE = 1
PILOT = 2
ORACLE = 3


def as_key(seed: SeedKey) -> tuple[int, ...]:
    """Normalize a seed to a tuple of non-negative ints."""
    key = (seed,) if isinstance(seed, int) else tuple(int(s) for s in seed)
    if not key or any(s < 0 for s in key):
        raise ValueError(f"seed key must be non-negative ints, got {seed!r}")
    return key


def substream(seed: SeedKey, *path: int) -> np.random.Generator:
    """Return the generator for stream (seed, *path)."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(as_key(seed) + tuple(path)))
    )
