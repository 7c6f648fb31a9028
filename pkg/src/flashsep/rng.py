"""Named random streams derived from a single run seed.

Each consumer asks for a stream by name, so adding a new consumer never
shifts the draws seen by existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(name: str | int) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name) & 0xFFFFFFFF
    return zlib.crc32(str(name).encode("utf-8"))


def stream(seed: int, *names: str | int) -> np.random.Generator:
    """Return a Philox-backed generator for ``(seed, *names)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(_key(n) for n in names)])
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *names: str | int) -> int:
    """Derive a plain integer seed for a named sub-task."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(_key(n) for n in names)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
