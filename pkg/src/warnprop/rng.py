"""Counter-based seed splitting.

Every random stream is addressed by ``(master_seed, *key)``: the generator
for trial ``i`` of a component tagged ``tag`` is built from
``SeedSequence(master_seed, spawn_key=(tag, i))``. Changing the number of
trials therefore never reshuffles the earlier ones, and results do not
depend on how trials are scheduled over workers.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag(x) -> int:
    if isinstance(x, str):
        return zlib.crc32(x.encode())
    return int(x)


def stream(seed: int, *key) -> np.random.Generator:
    """Independent generator for the stream ``key`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed) & ((1 << 64) - 1), spawn_key=tuple(_tag(k) for k in key))
    return np.random.default_rng(ss)


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(seed)
