"""Seeded, splittable random streams.

A stream is identified by a root seed plus a tuple of integer ids, e.g.
``make_rng(seed, outer_rep, cell, inner_rep)``.  Distinct id tuples map to
non-overlapping ``SeedSequence`` children.
"""

import numpy as np


def make_rng(seed: int, *ids: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in ids))
    return np.random.Generator(np.random.PCG64(ss))


def stable_id(text: str) -> int:
    """Deterministic 32-bit id for a string label (``hash`` is salted per process)."""
    h = 2166136261
    for ch in text.encode():
        h = ((h ^ ch) * 16777619) & 0xFFFFFFFF
    return h
