"""Data model for token passages and hidden-state traces, plus the on-disk corpus format.

A corpus on disk is a JSON manifest pointing at a token JSONL file and optional
per-passage binary tensor files, so traces can be produced by any stack (an
exporter script, the built-in toy LM) and analyzed here without importing it.

Tensor file format (extension ``.hst``): a fixed 16-byte header
``magic(2s) version(u16) L(u32) T(u32) D(u32)``, all little-endian, followed by
``L*T*D`` little-endian float32 values in row-major ``[layer][time][dim]``
order. Logits files reuse the same container with ``L=1`` and ``D=vocab_size``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

MAGIC = b"HS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<2sHIII")

ORIGINS = frozenset({"real", "generated"})
SPLITS = frozenset({"train", "valid", "test", "synthetic"})


class CorpusError(Exception):
    """Base class for corpus load/write failures."""


class CorpusLoadError(CorpusError):
    """A manifest entry could not be materialized (missing file, bad reference)."""


class TensorFormatError(CorpusError):
    """A tensor file header or payload does not match its declaration."""


@dataclass(frozen=True)
class Passage:
    """One token sequence with its provenance.

    ``origin`` is "real" for natural text and "generated" for model output;
    generated passages record how many leading tokens were the condition.
    ``meta`` carries free-form keys (e.g. decoding strategy, condition_id).
    """

    tokens: tuple[int, ...]
    passage_id: str
    text: Optional[str] = None
    origin: str = "real"
    condition_len: int = 0
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {sorted(ORIGINS)}, got {self.origin!r}")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {sorted(SPLITS)}, got {self.split!r}")
        if not (0 <= self.condition_len <= len(self.tokens)):
            raise ValueError(
                f"condition_len {self.condition_len} out of range for {len(self.tokens)} tokens"
            )
        if self.origin == "real" and self.condition_len != 0:
            raise ValueError("real passages must have condition_len == 0")
        if any(t < 0 for t in self.tokens):
            raise ValueError("token ids must be non-negative")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def continuation(self) -> tuple[int, ...]:
        """Tokens after the conditioning prefix."""
        return self.tokens[self.condition_len :]


@dataclass(frozen=True)
class StateTrace:
    """Per-layer, per-step hidden states for one passage, shape (L, T, D)."""

    passage_id: str
    states: np.ndarray

    def __post_init__(self):
        if self.states.ndim != 3:
            raise ValueError(f"states must be (L, T, D), got shape {self.states.shape}")
        if min(self.states.shape) < 1:
            raise ValueError(f"all of L, T, D must be >= 1, got shape {self.states.shape}")
        if self.states.dtype != np.float32:
            object.__setattr__(self, "states", self.states.astype(np.float32))
        self.states.flags.writeable = False

    @property
    def num_layers(self) -> int:
        return self.states.shape[0]

    @property
    def num_steps(self) -> int:
        return self.states.shape[1]

    @property
    def dim(self) -> int:
        return self.states.shape[2]


@dataclass(frozen=True)
class CorpusEntry:
    passage: Passage
    states: Optional[StateTrace] = None
    logits: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Corpus:
    """An immutable, fully materialized corpus; safe to share across threads."""

    vocab_size: int
    entries: tuple[CorpusEntry, ...]
    format_version: int = FORMAT_VERSION

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def passages(self) -> list[Passage]:
        return [e.passage for e in self.entries]

    def by_id(self, passage_id: str) -> CorpusEntry:
        for e in self.entries:
            if e.passage.passage_id == passage_id:
                return e
        raise KeyError(passage_id)


def write_state_file(path: Union[str, Path], states: np.ndarray) -> None:
    """Write an (L, T, D) float array in the binary tensor format."""
    arr = np.ascontiguousarray(states, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError(f"expected a 3-d array, got shape {arr.shape}")
    L, T, D = arr.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, L, T, D))
        f.write(arr.tobytes())


def read_state_file(path: Union[str, Path]) -> np.ndarray:
    """Read a ``.hst`` tensor file; returns a read-only (L, T, D) float32 array."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise TensorFormatError(f"{path}: truncated header")
    magic, version, L, T, D = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * L * T * D
    if len(raw) != expected:
        raise TensorFormatError(
            f"{path}: payload size {len(raw) - _HEADER.size} bytes does not match "
            f"header L={L} T={T} D={D}"
        )
    arr = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(L, T, D)
    arr = arr.copy()  # decouple from the read buffer
    arr.flags.writeable = False
    return arr


def _passage_to_record(p: Passage) -> dict:
    rec = {
        "id": p.passage_id,
        "tokens": list(p.tokens),
        "text": p.text,
        "origin": p.origin,
        "condition_len": p.condition_len,
        "split": p.split,
    }
    if p.meta:
        rec["meta"] = p.meta
    return rec


def _record_to_passage(rec: dict) -> Passage:
    return Passage(
        tokens=tuple(int(t) for t in rec["tokens"]),
        passage_id=str(rec["id"]),
        text=rec.get("text"),
        origin=rec.get("origin", "real"),
        condition_len=int(rec.get("condition_len", 0)),
        split=rec.get("split", "train"),
        meta=rec.get("meta", {}),
    )


def write_corpus(
    entries: Iterable[Union[CorpusEntry, tuple]],
    out_dir: Union[str, Path],
    vocab_size: int,
    manifest_name: str = "manifest.json",
) -> Path:
    """Write passages (and any states/logits) under ``out_dir``; returns the manifest path.

    Layout: ``tokens.jsonl`` with one record per passage, ``states/<id>.hst``
    and ``logits/<id>.hst`` per entry that has them. Round-trips bit-exactly
    through :func:`load_corpus`.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CorpusError(f"cannot create output directory {out_dir}: {e}") from e

    normalized: list[CorpusEntry] = []
    for e in entries:
        if not isinstance(e, CorpusEntry):
            e = CorpusEntry(*e) if isinstance(e, tuple) else CorpusEntry(e)
        normalized.append(e)

    seen: set[str] = set()
    manifest_entries = []
    token_path = out_dir / "tokens.jsonl"
    with open(token_path, "w", encoding="utf-8") as tf:
        for e in normalized:
            p = e.passage
            if p.passage_id in seen:
                raise CorpusError(f"duplicate passage_id {p.passage_id!r}")
            seen.add(p.passage_id)
            if any(t >= vocab_size for t in p.tokens):
                raise CorpusError(
                    f"passage {p.passage_id!r} has token ids >= vocab_size {vocab_size}"
                )
            tf.write(json.dumps(_passage_to_record(p)) + "\n")

            entry = {"passage_id": p.passage_id, "tokens": "tokens.jsonl"}
            if e.states is not None:
                if e.states.num_steps != len(p.tokens):
                    raise CorpusError(
                        f"passage {p.passage_id!r}: trace has T={e.states.num_steps} "
                        f"but passage has {len(p.tokens)} tokens"
                    )
                rel = f"states/{p.passage_id}.hst"
                write_state_file(out_dir / rel, e.states.states)
                entry["states"] = rel
                entry["layers"] = e.states.num_layers
                entry["dim"] = e.states.dim
            if e.logits is not None:
                logits = np.asarray(e.logits, dtype=np.float32)
                if logits.shape != (len(p.tokens), vocab_size):
                    raise CorpusError(
                        f"passage {p.passage_id!r}: logits shape {logits.shape} != "
                        f"(T={len(p.tokens)}, vocab={vocab_size})"
                    )
                rel = f"logits/{p.passage_id}.hst"
                write_state_file(out_dir / rel, logits[None])
                entry["logits"] = rel
            manifest_entries.append(entry)

    manifest = {
        "format_version": FORMAT_VERSION,
        "vocab_size": vocab_size,
        "entries": manifest_entries,
    }
    manifest_path = out_dir / manifest_name
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest_path


def load_corpus(manifest_path: Union[str, Path]) -> Corpus:
    """Load a corpus from its manifest, validating every entry.

    Raises :class:`CorpusLoadError` naming the offending passage when a
    referenced file is missing, and :class:`TensorFormatError` when a tensor
    header disagrees with the manifest or the token count.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise CorpusLoadError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CorpusLoadError(f"manifest {manifest_path} is not valid JSON: {e}") from e

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CorpusLoadError(f"unsupported format_version {version!r}")
    vocab_size = int(manifest["vocab_size"])
    base = manifest_path.parent

    # Token files are parsed once and indexed by id.
    token_cache: dict[Path, dict[str, Passage]] = {}

    def passages_in(path: Path) -> dict[str, Passage]:
        if path not in token_cache:
            if not path.exists():
                raise CorpusLoadError(f"token file not found: {path}")
            table: dict[str, Passage] = {}
            with open(path, encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    table[str(rec["id"])] = _record_to_passage(rec)
            token_cache[path] = table
        return token_cache[path]

    entries: list[CorpusEntry] = []
    seen: set[str] = set()
    for raw in manifest["entries"]:
        pid = str(raw["passage_id"])
        if pid in seen:
            raise CorpusLoadError(f"duplicate passage_id {pid!r} in manifest")
        seen.add(pid)

        table = passages_in(base / raw["tokens"])
        if pid not in table:
            raise CorpusLoadError(f"passage {pid!r} not found in token file {raw['tokens']}")
        passage = table[pid]
        bad = [t for t in passage.tokens if t >= vocab_size]
        if bad:
            raise CorpusLoadError(
                f"passage {pid!r}: token id {bad[0]} >= vocab_size {vocab_size}"
            )

        states = None
        if raw.get("states"):
            spath = base / raw["states"]
            if not spath.exists():
                raise CorpusLoadError(f"passage {pid!r}: state file not found: {spath}")
            arr = read_state_file(spath)
            if arr.shape[1] != len(passage.tokens):
                raise TensorFormatError(
                    f"passage {pid!r}: trace T={arr.shape[1]} but passage has "
                    f"{len(passage.tokens)} tokens"
                )
            for key, axis in (("layers", 0), ("dim", 2)):
                if key in raw and raw[key] != arr.shape[axis]:
                    raise TensorFormatError(
                        f"passage {pid!r}: manifest says {key}={raw[key]} but tensor "
                        f"header has {arr.shape[axis]}"
                    )
            states = StateTrace(passage_id=pid, states=arr)

        logits = None
        if raw.get("logits"):
            lpath = base / raw["logits"]
            if not lpath.exists():
                raise CorpusLoadError(f"passage {pid!r}: logits file not found: {lpath}")
            larr = read_state_file(lpath)
            if larr.shape[0] != 1 or larr.shape[1] != len(passage.tokens) or larr.shape[2] != vocab_size:
                raise TensorFormatError(
                    f"passage {pid!r}: logits shape {larr.shape} incompatible with "
                    f"T={len(passage.tokens)}, vocab={vocab_size}"
                )
            logits = larr[0]

        entries.append(CorpusEntry(passage=passage, states=states, logits=logits))

    return Corpus(vocab_size=vocab_size, entries=tuple(entries), format_version=version)
