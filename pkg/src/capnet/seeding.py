"""Reproducible seed derivation for replicates and grid cells."""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(seed: int, *index: int) -> int:
    """``seed XOR splitmix64(i)``; extra index components fold in after
    re-mixing so ``(i, j)`` and ``(j, i)`` differ.

    Independent of execution order and of Python's salted ``hash``.
    """
    out = int(seed) & _MASK
    for n, i in enumerate(index):
        if n:
            out = splitmix64(out)
        out ^= splitmix64(int(i) & _MASK)
    return out


def rng_for(seed: int, *index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *index))
