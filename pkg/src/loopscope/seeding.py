"""Deterministic seed derivation used by every randomized stage.

The generator is pinned to PCG64 so that results are bit-reproducible across
runs and platforms. Derived seeds mix a base seed with a label (a passage id,
a stage name) through SHA-256, which makes per-item streams independent of
collection ordering. External producers of score files follow this exact
scheme, so it is a wire-level contract: do not change it without versioning
the file formats.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(base_seed: int, label: str) -> int:
    """64-bit seed: ``base_seed XOR first-8-bytes-LE(sha256(label))``."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return (int(base_seed) ^ int.from_bytes(digest[:8], "little")) & _MASK64


def make_rng(seed: int) -> np.random.Generator:
    """The project-wide generator: PCG64 seeded with a 64-bit integer."""
    return np.random.Generator(np.random.PCG64(seed & _MASK64))
