"""Named random sub-streams derived from one root seed."""

import zlib

import numpy as np


def stream(seed, name, *index):
    """Independent generator for ``(seed, name, *index)``; stable across runs and platforms."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key, *map(int, index)]))
