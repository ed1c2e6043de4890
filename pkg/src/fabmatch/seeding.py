"""Deterministic RNG stream derivation.

Every random draw in the package comes from a Generator built by mixing a
master seed with small integer purpose tags through ``numpy.random.SeedSequence``.
Distinct tags give independent streams, so e.g. reordering batch sampling can
never perturb weight initialization.
"""
from __future__ import annotations

import numpy as np

# Purpose tags. Values are arbitrary but frozen: changing one changes every
# downstream stream derived from it.
TAG_FABRICS = 11
TAG_WORLD_MAP = 12
TAG_NUISANCE = 13
TAG_NOISE = 14
TAG_KMEANS = 15
TAG_SPLIT = 16
TAG_INIT = 21
TAG_BATCH = 22
TAG_EVAL = 31
TAG_AUGMENT = 41


def rng_from(*parts: int) -> np.random.Generator:
    """Build a Generator from a tuple of integer tags (negatives wrap to u64)."""
    entropy = [int(p) & 0xFFFFFFFFFFFFFFFF for p in parts]
    return np.random.default_rng(np.random.SeedSequence(entropy))
