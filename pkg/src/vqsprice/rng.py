"""Counter-based random streams keyed by an explicit 64-bit seed."""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def philox(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for ``(seed, *stream)``; identical keys give identical draws."""
    key = [int(seed) & _MASK, *(int(s) & _MASK for s in stream)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
