"""Deterministic stream derivation for the synthetic data generator.

All randomness flows through Philox, a counter based 64-bit generator,
keyed through ``SeedSequence`` spawn keys so that each (seed, tag) pair
is an independent sub-stream:

    direction stream:  SeedSequence(entropy=seed, spawn_key=(0,))
    radial stream:     SeedSequence(entropy=seed, spawn_key=(1,))

Direction draws never consume from the radial stream, so for a fixed
seed the directions (and hence the normalized samples) are the same no
matter which radial law is attached, or how many variates that law
consumes.
"""

from __future__ import annotations

import numpy as np

DIRECTION_STREAM = 0
RADIAL_STREAM = 1


def substream(seed: int, tag: int) -> np.random.Generator:
    """Return the generator for one derived sub-stream of ``seed``."""
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValueError(f"seed must be a nonnegative integer, got {seed!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag,))
    return np.random.Generator(np.random.Philox(ss))
