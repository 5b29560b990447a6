"""Seeded random streams with reproducible child derivation."""

from __future__ import annotations

import numpy as np


class RandomStream:
    """A seeded random stream backed by a PCG64 generator.

    Identical (seed, spawn_key) and an identical draw sequence produce
    bit-identical outputs.  Children derived with distinct indices use
    distinct derived seeds and are independent by construction.

    A stream is single-owner: it may be handed between threads, but must
    never be used from two threads concurrently.
    """

    def __init__(self, seed: int, spawn_key: tuple = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.PCG64(seq))
        self.position = 0  # number of sampler calls served, for diagnostics

    def child(self, index: int) -> "RandomStream":
        """Derive an independent stream; distinct indices never collide."""
        return RandomStream(self.seed, self.spawn_key + (int(index),))

    def bump(self) -> np.random.Generator:
        """Count one sampler call and hand out the generator."""
        self.position += 1
        return self.generator

    def __repr__(self):
        return (f"RandomStream(seed={self.seed}, spawn_key={self.spawn_key}, "
                f"position={self.position})")


def as_stream(seed_or_stream) -> RandomStream:
    if isinstance(seed_or_stream, RandomStream):
        return seed_or_stream
    return RandomStream(int(seed_or_stream))
