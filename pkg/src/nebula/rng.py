"""Deterministic, named seed substreams.

Every procedural draw in the harness goes through a named substream so that
varying one factor (say, the probed attribute of a task) can never shift the
draws made for another factor. Substreams are derived by hashing the seed
together with the stream tags, which is stable across platforms and Python
versions, unlike deriving streams by consuming a shared generator.
"""
from __future__ import annotations

import hashlib
import random


def subseed(seed: int, *tags: object) -> int:
    """Derive a 64-bit seed for the substream named by ``tags``."""
    label = "|".join(str(t) for t in tags)
    digest = hashlib.sha256(f"{seed}::{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *tags: object) -> random.Random:
    """A fresh PRNG for the substream named by ``tags``."""
    return random.Random(subseed(seed, *tags))


def fisher_yates(items, rng: random.Random) -> list:
    """Explicit seeded Fisher-Yates shuffle (stable across Python versions)."""
    out = list(items)
    for i in range(len(out) - 1, 0, -1):
        j = rng.randrange(i + 1)
        out[i], out[j] = out[j], out[i]
    return out
