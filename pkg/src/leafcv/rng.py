"""Seeded random streams.

All randomness goes through numpy's PCG64 bit generator, which produces the
same sequence on every platform. Independent streams are derived by keying a
SeedSequence with ``(seed, *keys)``, e.g. ``(seed, epoch)`` or
``(seed, class_id, index)``, so any worker can reconstruct its stream without
coordination.
"""
import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
