"""Seeded generator helpers shared by every module."""

from __future__ import annotations

import numpy as np


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Return an independent generator keyed by ``(seed, *keys)``.

    Two calls with the same arguments yield identical streams, and streams with
    different keys are statistically independent, so work split across
    processes reproduces a serial run exactly.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
