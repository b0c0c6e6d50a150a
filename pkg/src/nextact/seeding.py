"""Deterministic fan-out of one experiment seed into named RNG streams.

Every source of randomness in the package (init, dropout, negative sampling,
shuffling, synthesis, window jitter) draws from its own named stream so that
components can be re-seeded independently in tests while a single ``--seed``
still pins the whole run.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "generator_state", "restore_generator"]


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the PCG64 generator for (seed, name); stable across runs."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), tag])))


def generator_state(gen: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator's position."""
    return gen.bit_generator.state


def restore_generator(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)
