"""Detection of verbatim repetitive loops in token sequences.

A loop is a suffix of the form ``... block block block`` where ``block`` has
``period`` tokens and repeats verbatim until the end of the sequence. The
detector anchors at the sequence end: it first finds a period length whose
last block equals the block before it, then scans backward for the earliest
start from which the whole suffix is period-shift stable.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import chain
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from .trace import Passage

SENTENCE_TERMINALS = (".", "!", "?", "\n")


@dataclass(frozen=True)
class LoopSpec:
    """A detected loop: first period starts at ``start`` and has ``period`` tokens.

    ``start + period`` is the step where verbatim repetition begins.
    ``rotated_tokens`` is the punctuation-aligned rotation of ``loop_tokens``,
    filled in only when token text is available.
    """

    start: int
    period: int
    loop_tokens: tuple[int, ...]
    rotated_tokens: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.period < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")
        if self.start < 0:
            raise ValueError(f"start must be >= 0, got {self.start}")
        if len(self.loop_tokens) != self.period:
            raise ValueError("loop_tokens length must equal period")

    @property
    def repeat_onset(self) -> int:
        """First step at which the sequence is a verbatim copy of an earlier block."""
        return self.start + self.period


def _candidate_periods(n: int) -> Iterable[int]:
    # Periods >= 4 are preferred; 1..3 are fallbacks tried last. A period is
    # only viable when two full blocks fit in the sequence.
    return (p for p in chain(range(4, n // 2 + 1), (1, 2, 3)) if 2 * p <= n)


def detect_loop(tokens: Sequence[int]) -> Optional[LoopSpec]:
    """Return the loop a sequence ends with, or None.

    The period is the first length ``p`` (tried in the order 4, 5, ...,
    ``len//2``, 1, 2, 3) for which the last ``p`` tokens equal the preceding
    ``p`` tokens. The start is the earliest index from which every token
    equals the one ``p`` steps later, i.e. the phase of the block boundary is
    free. Absence of a loop is a value, not an error.
    """
    toks = list(tokens)
    n = len(toks)
    if n < 2:
        return None
    for p in _candidate_periods(n):
        if toks[n - p :] == toks[n - 2 * p : n - p]:
            j = n - p - 1
            while j >= 0 and toks[j] == toks[j + p]:
                j -= 1
            start = j + 1
            return LoopSpec(start=start, period=p, loop_tokens=tuple(toks[start : start + p]))
    return None


def loop_rate(passages: Sequence[Passage]) -> float:
    """Fraction of passages whose post-condition suffix ends in a loop."""
    if not passages:
        raise ValueError("loop_rate requires a non-empty collection of passages")
    hits = sum(1 for p in passages if detect_loop(p.continuation) is not None)
    return hits / len(passages)


def _token_text(text_map: Union[Mapping[int, str], Callable[[int], str]], token: int) -> str:
    if callable(text_map):
        return text_map(token)
    return text_map[token]


def rotate_to_sentence_start(
    loop: LoopSpec,
    text_map: Union[Mapping[int, str], Callable[[int], str]],
    terminals: Sequence[str] = SENTENCE_TERMINALS,
) -> tuple[int, ...]:
    """Cyclically rotate the loop so it begins right after its last sentence end.

    A token counts as sentence-terminal when its text, ignoring trailing
    whitespace, ends with one of ``terminals``. With no terminal in the loop
    the tokens are returned unrotated; a loop already ending at a terminal
    rotates by zero.
    """
    toks = loop.loop_tokens
    last_terminal = None
    for i, tok in enumerate(toks):
        text = _token_text(text_map, tok).rstrip(" \t")
        if text and text.endswith(tuple(terminals)):
            last_terminal = i
    if last_terminal is None:
        return toks
    cut = (last_terminal + 1) % len(toks)
    return toks[cut:] + toks[:cut]
