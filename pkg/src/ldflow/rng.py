"""Seed splitting for path sampling.

Every path owns a seed; path ``i`` of a batch started from ``base_seed``
uses ``splitmix64(base_seed) XOR i`` (64-bit).  The splitmix64 finalizer keeps
batches with nearby base seeds (1, 2, 3, ...) from sharing path seeds.  Each
path seed opens two independent counter-based Philox streams, one per
purpose:

* ``HOLD`` (purpose 1) -- the i-th uniform gives holding time i,
* ``SKELETON`` (purpose 0) -- the i-th uniform picks the destination of jump i+1.

The Philox key is the 128-bit integer ``(purpose << 64) | path_seed`` with the
counter starting at zero, so any implementation of Philox-4x64 reproduces
the streams.
"""
import numpy as np

MASK64 = (1 << 64) - 1
SKELETON = 0
HOLD = 1


def splitmix64(x: int) -> int:
    z = (int(x) + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def path_seed(base_seed: int, index: int) -> int:
    return splitmix64(base_seed) ^ (int(index) & MASK64)


def stream(seed: int, purpose: int) -> np.random.Generator:
    key = (int(purpose) << 64) | (int(seed) & MASK64)
    return np.random.Generator(np.random.Philox(key=key))
