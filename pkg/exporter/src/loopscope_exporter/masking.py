"""Mask-position selection, bit-identical to the analysis toolkit's.

This is a wire-level contract shared with the score-file consumer: positions
are drawn from PCG64 seeded with ``base_seed XOR first-8-bytes-LE of
sha256("mask:" + passage_id)``, via a partial Fisher-Yates that consumes one
``rng.random()`` double per selected position. Do not change any step without
versioning the score-file format.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(base_seed: int, label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return (int(base_seed) ^ int.from_bytes(digest[:8], "little")) & _MASK64


def passage_mask_rng(seed: int, passage_id: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, f"mask:{passage_id}")))


def mask_positions(n_tokens: int, n_masked: int, rng: np.random.Generator) -> list[int]:
    if not (0 < n_masked <= n_tokens):
        raise ValueError(f"need 0 < n_masked <= n_tokens, got {n_masked}/{n_tokens}")
    idx = list(range(n_tokens))
    for i in range(n_masked):
        j = i + int(rng.random() * (n_tokens - i))
        if j >= n_tokens:
            j = n_tokens - 1
        idx[i], idx[j] = idx[j], idx[i]
    return sorted(idx[:n_masked])
