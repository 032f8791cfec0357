"""Counter-based seeding: every (seed, key...) tuple gets its own stream.

Streams depend only on their keys, never on the order in which work items
are scheduled, so parallel and serial runs draw identical numbers.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import ConfigError

MAX_SEED = 2**64 - 1


def _word(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if isinstance(key, (int, np.integer)) and key >= 0:
        return int(key)
    raise TypeError(f"rng keys must be str or non-negative int, got {key!r}")


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def derive_rng(seed: int, *keys) -> np.random.Generator:
    seed = check_seed(seed)
    # key lengths are folded in so ("ab",) and ("a", "b") never collide
    words = [seed & 0xFFFFFFFF, seed >> 32, len(keys)] + [_word(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(words))
