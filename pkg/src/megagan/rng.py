"""Seeded random streams.

All randomness goes through numpy's PCG64 (PCG-XSL-RR 128/64) bit generator,
seeded through ``SeedSequence`` so that a given integer seed yields the same
stream on every platform.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *streams: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed``; extra ints select independent substreams."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, streams)])))


def get_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def from_state(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)
