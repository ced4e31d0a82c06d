"""Deterministic random streams derived from one 64-bit seed.

Every consumer asks for ``stream(seed, label, index, ...)``; labels are hashed
with a fixed digest so the derived streams do not depend on Python's hash
randomization, call order, or how work is scheduled.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2b(str(part).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *keys) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
