"""Seed derivation.

Every stochastic unit of work gets its own generator, derived from the root
seed and a key path:

    SeedSequence(entropy=root, spawn_key=(crc32(tag), *keys)) -> PCG64

so any branch ``(tag, t, r)`` can be regenerated in isolation and different
tags (``"init"``, ``"main"``, ``"sibling"``, ``"eval-main"`` ...) never share a
stream.
"""

from __future__ import annotations

import zlib

import numpy as np

DERIVATION = "numpy.SeedSequence(root, spawn_key=(crc32(tag), *keys)) -> PCG64"


def tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def derive_rng(root: int, tag: str, *keys: int) -> np.random.Generator:
    if root < 0:
        raise ValueError("root seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=(tag_key(tag), *map(int, keys)))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(root: int, tag: str, *keys: int) -> int:
    """A 63-bit integer seed for handing to code that wants a plain int."""
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=(tag_key(tag), *map(int, keys)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
