"""Reproducible, splittable random streams.

Every stream is a Philox (counter-based) generator keyed by the master seed
plus an integer tuple such as ``(repetition, epoch, level, block)``, so any
sub-stream can be regenerated without replaying the others.
"""

from __future__ import annotations

import numpy as np


class RandomStreams:
    def __init__(self, seed: int, prefix: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.prefix = tuple(int(k) for k in prefix)

    def child(self, *key: int) -> "RandomStreams":
        return RandomStreams(self.seed, self.prefix + tuple(int(k) for k in key))

    def generator(self, *key: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.prefix + tuple(int(k) for k in key))
        return np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"RandomStreams(seed={self.seed}, prefix={self.prefix})"
