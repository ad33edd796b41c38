"""Counter-based random substreams.

Every stream is addressed by ``(root_seed, *keys)`` through numpy's
``SeedSequence`` spawn keys, so a cell's randomness depends only on its own
address: adding schemes or seeds, or changing the worker count, leaves every
other cell's draws untouched. String keys are mapped through CRC-32.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(k: int | str) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    if k < 0:
        raise ValueError(f"stream keys must be nonnegative, got {k}")
    return int(k)


def substream(root_seed: int, *keys: int | str) -> np.random.Generator:
    seq = np.random.SeedSequence(root_seed, spawn_key=tuple(_key(k) for k in keys))
    return np.random.default_rng(seq)
