"""ROUGE-L, loop-inducingness harnesses, and the masked-likelihood protocol.

ROUGE-L here is sentence-level LCS F1 over lowercased whitespace words.
The masked-likelihood protocol is scorer-agnostic: a scorer maps (passage,
masked positions, repetition index) to one log-likelihood per masked
position. The built-in uniform scorer serves tests; real masked-LM scores
arrive through score files (JSONL of ``{passage_id, repetition, positions,
loglik}``) written by an external exporter that follows the same mask-RNG
contract (see :func:`mask_positions`).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Protocol, Sequence, Union

import numpy as np

from . import decode
from .seeding import derive_seed, make_rng
from .trace import Passage

logger = logging.getLogger(__name__)

CONDITION_CLASSES = ("looping_sequence", "first_sentence", "last_sentence")


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _words(text: Union[str, Sequence[str]]) -> list[str]:
    if isinstance(text, str):
        return text.lower().split()
    return [str(w).lower() for w in text]


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    # Rolling-row DP; O(len(a) * len(b)) time, O(len(b)) space.
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(reference: Union[str, Sequence[str]], candidate: Union[str, Sequence[str]]) -> RougeScore:
    """LCS-based precision/recall/F1 over whitespace-split, lowercased words."""
    ref = _words(reference)
    cand = _words(candidate)
    if not ref or not cand:
        raise ValueError("rouge_l requires non-empty reference and candidate")
    lcs = _lcs_len(ref, cand)
    if lcs == 0:
        return RougeScore(0.0, 0.0, 0.0)
    p = lcs / len(cand)
    r = lcs / len(ref)
    return RougeScore(p, r, 2 * p * r / (p + r))


# ---------------------------------------------------------------------------
# Masked-likelihood protocol


class MaskedScorer(Protocol):
    def score(self, passage: Passage, positions: Sequence[int], repetition: int) -> list[float]:
        """Log-likelihood of recovering each masked token, one value per position."""
        ...


class UniformScorer:
    """Assigns every masked token probability 1/vocab_size."""

    def __init__(self, vocab_size: int):
        if vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        self.vocab_size = vocab_size

    def score(self, passage: Passage, positions: Sequence[int], repetition: int) -> list[float]:
        return [-math.log(self.vocab_size)] * len(positions)


class FileScorer:
    """Serves scores from a JSONL file keyed by (passage_id, repetition).

    Each line: ``{"passage_id": ..., "repetition": ..., "positions": [...],
    "loglik": [...]}``. The stored positions must equal the requested ones,
    which holds whenever producer and consumer share the mask-RNG contract.
    """

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._table: dict[tuple[str, int], tuple[list[int], list[float]]] = {}
        with open(self.path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                key = (str(rec["passage_id"]), int(rec["repetition"]))
                self._table[key] = (
                    [int(p) for p in rec["positions"]],
                    [float(v) for v in rec["loglik"]],
                )

    def score(self, passage: Passage, positions: Sequence[int], repetition: int) -> list[float]:
        key = (passage.passage_id, repetition)
        if key not in self._table:
            raise KeyError(f"no scores for passage {key[0]!r} repetition {key[1]}")
        stored_pos, loglik = self._table[key]
        if list(positions) != stored_pos:
            raise ValueError(
                f"score file positions for {key} do not match the mask-RNG contract"
            )
        return list(loglik)


def passage_mask_rng(seed: int, passage_id: str) -> np.random.Generator:
    """Mask-selection stream for one passage; independent of corpus order."""
    return make_rng(derive_seed(seed, f"mask:{passage_id}"))


def mask_positions(n_tokens: int, n_masked: int, rng: np.random.Generator) -> list[int]:
    """Draw ``n_masked`` distinct positions in [0, n_tokens), sorted.

    Partial Fisher-Yates driven only by ``rng.random()`` doubles, so any
    producer with the same PCG64 stream selects identical positions. This is
    the wire contract for score files; keep it in sync with external scorers.
    """
    if not (0 < n_masked <= n_tokens):
        raise ValueError(f"need 0 < n_masked <= n_tokens, got {n_masked}/{n_tokens}")
    idx = list(range(n_tokens))
    for i in range(n_masked):
        j = i + int(rng.random() * (n_tokens - i))
        if j >= n_tokens:  # guards the float-rounding edge at random() ~ 1.0
            j = n_tokens - 1
        idx[i], idx[j] = idx[j], idx[i]
    return sorted(idx[:n_masked])


@dataclass(frozen=True)
class LikelihoodCurve:
    steps: tuple[int, ...]
    mean: tuple[float, ...]
    n: tuple[int, ...]


def masked_likelihood_curve(
    passages: Sequence[Passage],
    scorer: MaskedScorer,
    mask_fraction: float = 0.15,
    repetitions: int = 10,
    seed: int = 0,
) -> LikelihoodCurve:
    """Per-time-step mean masked log-likelihood over passages and repetitions.

    Each repetition masks ``ceil(mask_fraction * T)`` fresh uniform positions
    per passage. Steps never masked in any repetition contribute no sample.
    A failing scorer call is retried once, then aborted with context. The
    result does not depend on passage ordering.
    """
    if not (0.0 < mask_fraction < 1.0):
        raise ValueError("mask_fraction must be in (0, 1)")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if not passages:
        raise ValueError("masked_likelihood_curve requires passages")

    per_passage: dict[str, dict[int, list[float]]] = {}
    for p in passages:
        T = len(p.tokens)
        if T == 0:
            continue
        m = math.ceil(mask_fraction * T)
        rng = passage_mask_rng(seed, p.passage_id)
        samples: dict[int, list[float]] = {}
        for rep in range(repetitions):
            positions = mask_positions(T, m, rng)
            try:
                lls = scorer.score(p, positions, rep)
            except Exception:
                logger.warning(
                    "scorer failed on passage %s repetition %d; retrying once",
                    p.passage_id,
                    rep,
                )
                try:
                    lls = scorer.score(p, positions, rep)
                except Exception as e:
                    raise RuntimeError(
                        f"scorer failed twice on passage {p.passage_id!r} "
                        f"repetition {rep}"
                    ) from e
            if len(lls) != len(positions):
                raise ValueError(
                    f"scorer returned {len(lls)} values for {len(positions)} positions "
                    f"(passage {p.passage_id!r})"
                )
            if any(v > 1e-9 for v in lls):
                raise ValueError(f"log-likelihoods must be <= 0 (passage {p.passage_id!r})")
            for pos, ll in zip(positions, lls):
                samples.setdefault(pos, []).append(float(ll))
        per_passage[p.passage_id] = samples

    # Merge in sorted-passage-id order so float accumulation is
    # order-independent of the input collection.
    merged: dict[int, list[float]] = {}
    for pid in sorted(per_passage):
        for pos, vals in per_passage[pid].items():
            merged.setdefault(pos, []).extend(vals)
    steps = sorted(merged)
    means = tuple(math.fsum(merged[s]) / len(merged[s]) for s in steps)
    ns = tuple(len(merged[s]) for s in steps)
    return LikelihoodCurve(steps=tuple(steps), mean=means, n=ns)


# ---------------------------------------------------------------------------
# Loop-inducingness harnesses


@dataclass(frozen=True)
class InducingnessReport:
    """Aggregated ROUGE-L F1 between conditions of one class and the matching
    continuation prefixes; ``repeats`` is 0 for the plain (unrepeated) mode."""

    condition_class: str
    repeats: int
    mean: float
    std: float
    n: int
    scores: tuple[float, ...] = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("a report cell needs at least one score")


TextFn = Callable[[int], str]


def _render(tokens: Sequence[int], text_fn: TextFn) -> list[str]:
    return [text_fn(int(t)) for t in tokens]


def _score_condition(
    model,
    x: Sequence[int],
    condition: Sequence[int],
    config: decode.DecodeConfig,
    text_fn: TextFn,
    seed: int,
) -> float:
    passage = decode.generate(model, condition, config, seed=seed)
    echo = passage.continuation[: len(x)]
    if not echo:
        raise ValueError("empty continuation")
    return rouge_l(_render(x, text_fn), _render(echo, text_fn)).f1


def _aggregate_cell(cls: str, repeats: int, scores: list[float]) -> InducingnessReport:
    arr = np.asarray(scores, dtype=np.float64)
    return InducingnessReport(
        condition_class=cls,
        repeats=repeats,
        mean=float(arr.mean()),
        std=float(arr.std()),
        n=len(scores),
        scores=tuple(float(s) for s in scores),
    )


def inducingness_simple(
    conditions_by_class: Mapping[str, Sequence[Sequence[int]]],
    model,
    config: decode.DecodeConfig,
    text_fn: TextFn = str,
) -> list[InducingnessReport]:
    """For each condition x: generate a continuation and score ROUGE-L between
    x and the continuation's first len(x) tokens; aggregate per class.

    Conditions whose generation fails are skipped and logged.
    """
    reports = []
    for cls, conditions in conditions_by_class.items():
        if not conditions:
            raise ValueError(f"condition class {cls!r} is empty")
        scores: list[float] = []
        for i, x in enumerate(conditions):
            try:
                scores.append(
                    _score_condition(
                        model,
                        x,
                        x,
                        config,
                        text_fn,
                        seed=derive_seed(config.seed, f"inducing:{cls}:{i}"),
                    )
                )
            except Exception as e:
                logger.warning("skipping condition %s[%d]: %s", cls, i, e)
        if not scores:
            raise ValueError(f"all conditions failed for class {cls!r}")
        reports.append(_aggregate_cell(cls, 0, scores))
    return reports


def inducingness_repeated(
    context: Sequence[int],
    conditions_by_class: Mapping[str, Sequence[Sequence[int]]],
    model,
    config: decode.DecodeConfig,
    repeats: Sequence[int] = (1, 2, 3),
    text_fn: TextFn = str,
) -> list[InducingnessReport]:
    """Condition on context + x repeated 1..3 times; score against x itself.

    The context plays the role of neutral preceding material and is fixed
    across all conditions of a run.
    """
    context = tuple(int(t) for t in context)
    reports = []
    for cls, conditions in conditions_by_class.items():
        if not conditions:
            raise ValueError(f"condition class {cls!r} is empty")
        for rep in repeats:
            if rep < 1:
                raise ValueError("repeat counts must be >= 1")
            scores: list[float] = []
            for i, x in enumerate(conditions):
                x = tuple(int(t) for t in x)
                condition = context + x * rep
                try:
                    scores.append(
                        _score_condition(
                            model,
                            x,
                            condition,
                            config,
                            text_fn,
                            seed=derive_seed(config.seed, f"inducing:{cls}:{rep}:{i}"),
                        )
                    )
                except Exception as e:
                    logger.warning("skipping condition %s[%d] x%d: %s", cls, i, rep, e)
            if not scores:
                raise ValueError(f"all conditions failed for class {cls!r} x{rep}")
            reports.append(_aggregate_cell(cls, rep, scores))
    return reports
