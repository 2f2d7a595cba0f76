"""Counter-based random streams.

Every stream is addressed by ``(master_seed, purpose, index)`` through a
Philox bit generator keyed by a SeedSequence spawn key, so the numbers a
given cell or chain receives never depend on scheduling or worker count.
"""
from __future__ import annotations

import zlib

import numpy as np


def purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(master_seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Independent generator for ``(master_seed, purpose, *index)``."""
    if master_seed < 0 or master_seed >= 2**64:
        raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {master_seed}")
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(purpose_key(purpose), *map(int, index)))
    return np.random.Generator(np.random.Philox(ss))


class BlockNoise:
    """Standard normal draws for a block of cells, one stream per cell.

    ``normal()`` returns an array of shape ``(sum(sizes), d)`` where the rows
    of cell ``i`` always come from cell ``i``'s own stream, in step order.
    """

    def __init__(self, generators: list[np.random.Generator], sizes: list[int], dim: int):
        self.generators = generators
        self.sizes = [int(s) for s in sizes]
        self.dim = dim
        self.total = sum(self.sizes)

    @classmethod
    def for_cells(cls, master_seed: int, purpose: str, cells, sizes, dim: int, *extra: int):
        gens = [stream(master_seed, purpose, int(c), *extra) for c in cells]
        return cls(gens, list(sizes), dim)

    def normal(self) -> np.ndarray:
        out = np.empty((self.total, self.dim))
        i = 0
        for g, n in zip(self.generators, self.sizes):
            g.standard_normal(out=out[i:i + n])
            i += n
        return out

    def uniform(self) -> np.ndarray:
        out = np.empty((self.total, self.dim))
        i = 0
        for g, n in zip(self.generators, self.sizes):
            g.random(out=out[i:i + n])
            i += n
        return out
