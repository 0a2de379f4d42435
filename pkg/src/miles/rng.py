"""Deterministic random number generation.

Every stochastic choice in the package (weight init, data synthesis,
epoch shuffling) draws from its own PCG64 generator, seeded explicitly.
A given (config, seed) pair therefore replays bit-exactly, run to run
and machine to machine, for a fixed numpy version.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed) -> np.random.Generator:
    """Return a fresh PCG64-backed generator.

    `seed` is anything numpy's SeedSequence accepts: an int, or a list
    of ints for composite seeds such as ``[run_seed, stream_tag]``.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
