"""Decoding strategies over per-step probability vectors.

A probability source is anything with a ``next_distribution(prefix) -> probs``
method (or a bare callable with that signature); the strategies themselves
never see model internals. Distributions are plain 1-d arrays over the
vocabulary, validated to be non-negative and sum to 1 within 1e-9.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .seeding import make_rng
from .trace import Passage

STRATEGIES = ("greedy", "sample", "top_k", "nucleus")

DEFAULT_MAX_NEW_TOKENS = 462  # pairs with a 50-token condition for 512-token passages

SUM_TOLERANCE = 1e-9


class GenerationError(Exception):
    """Probability-source failure during generation; carries the failing step."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class DecodeConfig:
    """Strategy plus its parameters; strategy-specific fields must be present
    exactly when the strategy uses them."""

    strategy: str
    k: Optional[int] = None
    p: Optional[float] = None
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.strategy == "top_k":
            if self.k is None or self.k < 1:
                raise ValueError("top_k requires a positive k")
        elif self.k is not None:
            raise ValueError(f"k is only valid for top_k, not {self.strategy!r}")
        if self.strategy == "nucleus":
            if self.p is None or not (0.0 < self.p <= 1.0):
                raise ValueError("nucleus requires p in (0, 1]")
        elif self.p is not None:
            raise ValueError(f"p is only valid for nucleus, not {self.strategy!r}")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def label(self) -> str:
        """Short tag for filenames and report columns."""
        if self.strategy == "top_k":
            return f"top_k{self.k}"
        if self.strategy == "nucleus":
            return f"nucleus{self.p:g}"
        return self.strategy

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "DecodeConfig":
        return cls(**d)


def check_distribution(probs: Union[Sequence[float], np.ndarray]) -> np.ndarray:
    """Validate a probability vector and return it as float64."""
    dist = np.asarray(probs, dtype=np.float64)
    if dist.ndim != 1 or dist.size == 0:
        raise ValueError(f"expected a non-empty 1-d probability vector, got shape {dist.shape}")
    if not np.all(np.isfinite(dist)):
        raise ValueError("probabilities must be finite")
    if np.any(dist < 0):
        raise ValueError("probabilities must be non-negative")
    total = math.fsum(dist.tolist())
    if abs(total - 1.0) > SUM_TOLERANCE:
        raise ValueError(f"probabilities must sum to 1 within {SUM_TOLERANCE}, got {total!r}")
    return dist


def _descending_order(dist: np.ndarray) -> np.ndarray:
    # Descending probability; equal probabilities ordered by lowest token id,
    # so boundary ties resolve deterministically.
    return np.lexsort((np.arange(dist.size), -dist))


def restrict(probs, config: DecodeConfig) -> np.ndarray:
    """Apply the strategy's support restriction and renormalize.

    greedy/sample leave the distribution unchanged. top_k keeps the k most
    probable tokens (k clamped to the vocabulary). nucleus keeps the smallest
    descending-probability prefix with mass >= p. When the restriction removes
    no probability mass the input is returned as-is, so top_k with k=vocab and
    nucleus with p=1 equal pure sampling exactly.
    """
    dist = check_distribution(probs)
    if config.strategy in ("greedy", "sample"):
        return dist

    order = _descending_order(dist)
    if config.strategy == "top_k":
        cut = min(config.k, dist.size)
    else:
        if not (0.0 < config.p <= 1.0):
            raise ValueError("nucleus requires p in (0, 1]")
        cum = np.cumsum(dist[order])
        cut = int(np.searchsorted(cum, config.p, side="left")) + 1
        cut = min(cut, dist.size)

    keep = order[:cut]
    mask = np.zeros(dist.size, dtype=bool)
    mask[keep] = True
    if bool(np.all(mask[dist > 0])):
        return dist

    out = np.where(mask, dist, 0.0)
    total = math.fsum(out[mask].tolist())
    if total <= 0.0:
        raise ValueError("restriction removed all probability mass")
    out /= total
    return check_distribution(out)


def select(probs, config: DecodeConfig, rng: Optional[np.random.Generator] = None) -> int:
    """Choose one token id: argmax for greedy (ties to the lowest id), one
    multinomial draw from the restricted distribution otherwise."""
    dist = check_distribution(probs)
    if config.strategy == "greedy":
        return int(np.argmax(dist))
    if rng is None:
        raise ValueError(f"strategy {config.strategy!r} requires an rng")
    restricted = restrict(dist, config)
    cum = np.cumsum(restricted)
    u = rng.random()
    idx = int(np.searchsorted(cum, u, side="right"))
    if idx >= restricted.size:
        idx = int(np.flatnonzero(restricted > 0)[-1])
    return idx


ProbabilitySource = Union[Callable[[Sequence[int]], np.ndarray], object]


def _resolve_source(model: ProbabilitySource) -> Callable[[Sequence[int]], np.ndarray]:
    if hasattr(model, "next_distribution"):
        return model.next_distribution
    if callable(model):
        return model
    raise TypeError("model must be callable or expose next_distribution(prefix)")


def generate(
    model: ProbabilitySource,
    condition: Sequence[int],
    config: DecodeConfig,
    passage_id: Optional[str] = None,
    passage_ordinal: int = 0,
    seed: Optional[int] = None,
    split: str = "synthetic",
    meta: Optional[dict] = None,
) -> Passage:
    """Generate a continuation passage from a conditioning prefix.

    Deterministic for greedy, and for fixed seed otherwise; each passage gets
    its own stream (``config.seed XOR passage_ordinal`` unless ``seed`` is
    given). Model failures surface as :class:`GenerationError` with the step
    index attached.
    """
    condition = tuple(int(t) for t in condition)
    if not condition:
        raise ValueError("condition must be non-empty")
    source = _resolve_source(model)
    rng = make_rng(config.seed ^ passage_ordinal if seed is None else seed)

    toks = list(condition)
    for step in range(config.max_new_tokens):
        try:
            dist = source(toks)
        except Exception as e:
            raise GenerationError(f"probability source failed at step {step}: {e}", step) from e
        toks.append(select(dist, config, rng))

    full_meta = {"strategy": config.strategy}
    if meta:
        full_meta.update(meta)
    return Passage(
        tokens=tuple(toks),
        passage_id=passage_id if passage_id is not None else f"gen-{passage_ordinal:06d}",
        origin="generated",
        condition_len=len(condition),
        split=split,
        meta=full_meta,
    )
