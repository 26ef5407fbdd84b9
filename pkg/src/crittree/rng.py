"""Counter-based random streams.

Every replicate (tree, forest, batch) gets its own Philox stream derived from
(master seed, index tuple) via numpy's SeedSequence spawn keys, so results do
not depend on worker scheduling or batch interleaving.
"""

from __future__ import annotations

import numpy as np

_BLOCK = 1024


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the sub-stream identified by (seed, *key)."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(ss))


class BlockRng:
    """Scalar draws served from pre-generated blocks.

    Amortizes numpy Generator call overhead in event loops; the draw sequence
    is a deterministic function of the underlying stream.
    """

    def __init__(self, gen: np.random.Generator, block: int = _BLOCK):
        self._gen = gen
        self._block = block
        self._exp = np.empty(0)
        self._uni = np.empty(0)
        self._ie = 0
        self._iu = 0

    def exponential(self) -> float:
        if self._ie >= self._exp.size:
            self._exp = self._gen.standard_exponential(self._block)
            self._ie = 0
        v = self._exp[self._ie]
        self._ie += 1
        return v

    def uniform(self) -> float:
        if self._iu >= self._uni.size:
            self._uni = self._gen.random(self._block)
            self._iu = 0
        v = self._uni[self._iu]
        self._iu += 1
        return v
