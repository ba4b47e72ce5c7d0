"""
Random streams and discrete sampling.

Every replicate owns a counter-based Philox stream keyed by
(master_seed, replicate index), so results never depend on scheduling.
Discrete laws are sampled through Walker/Vose alias tables.
"""

from typing import Sequence

import numpy as np

MASK64 = (1 << 64) - 1


def replicate_rng(master_seed: int, replicate: int) -> np.random.Generator:
    """
    Stream of replicate `replicate` under `master_seed`.

    Args:
        master_seed: Graine maître (64 bits)
        replicate: Indice du réplicat

    Returns:
        Générateur numpy adossé à Philox4x64
    """
    seq = np.random.SeedSequence(int(master_seed) & MASK64, spawn_key=(int(replicate),))
    return np.random.Generator(np.random.Philox(seq))


def make_rng(seed: int) -> np.random.Generator:
    """Single stream for sequential use (tests, spine draws)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed) & MASK64)))


class AliasTable:
    """
    Vose alias table over a finite list of outcomes.

    O(K) construction, O(1) per draw; `draw` is vectorized over `size`.
    """

    def __init__(self, values: Sequence, probs: Sequence[float]):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 1 or len(probs) == 0:
            raise ValueError("AliasTable needs a non-empty 1-d probability vector")
        if np.any(probs < 0):
            raise ValueError("AliasTable probabilities must be non-negative")
        K = len(probs)
        self.values = np.asarray(values)
        self.size = K
        scaled = probs * K / probs.sum()
        self.prob = np.ones(K)
        self.alias = np.arange(K)

        # Sort the outcomes into those below and above the uniform level 1/K.
        smaller = [i for i in range(K) if scaled[i] < 1.0]
        larger = [i for i in range(K) if scaled[i] >= 1.0]
        while smaller and larger:
            small = smaller.pop()
            large = larger.pop()
            self.prob[small] = scaled[small]
            self.alias[small] = large
            scaled[large] = (scaled[large] + scaled[small]) - 1.0
            if scaled[large] < 1.0:
                smaller.append(large)
            else:
                larger.append(large)
        # leftovers are numerically 1
        for i in smaller + larger:
            self.prob[i] = 1.0

    def draw_index(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.size == 1:
            return np.zeros(size, dtype=np.int64)
        column = rng.integers(0, self.size, size=size)
        coin = rng.random(size)
        return np.where(coin < self.prob[column], column, self.alias[column])

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.values[self.draw_index(rng, size)]

    def draw_one(self, rng: np.random.Generator):
        return self.values[self.draw_index(rng, 1)[0]]
