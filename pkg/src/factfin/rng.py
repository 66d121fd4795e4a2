"""Reproducible random streams.

Every random draw in the package comes from ``make_rng``: numpy's Philox4x64
counter-based bit generator keyed by a 64-bit seed. Child seeds are derived
with the splitmix64 finalizer so scenario ``i`` of spec ``j`` never shares a
stream with any other scenario, independent of generation order.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *path: int) -> int:
    """Fold a path of integers into ``master``: s <- splitmix64(s ^ splitmix64(p))."""
    state = splitmix64(master & MASK64)
    for p in path:
        state = splitmix64(state ^ splitmix64(p & MASK64))
    return state


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed & MASK64))
