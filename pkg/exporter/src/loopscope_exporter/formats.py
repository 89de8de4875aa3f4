"""Writers for the trace wire formats consumed by the analysis toolkit.

These mirror the documented formats exactly (manifest JSON, token JSONL,
``.hst`` tensors: 16-byte header ``magic "HS" (2s), version (u16), L, T, D
(u32)``, little-endian, then float32 ``[layer][time][dim]``). They are
deliberately standalone: the exporter talks to the toolkit only through
files. All writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

MAGIC = b"HS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<2sHIII")


@dataclass
class ExportRecord:
    """One passage with whatever tensors were captured for it."""

    passage_id: str
    tokens: list[int]
    text: Optional[str] = None
    origin: str = "real"
    condition_len: int = 0
    split: str = "valid"
    meta: dict = field(default_factory=dict)
    states: Optional[np.ndarray] = None  # (L, T, D) float32
    logits: Optional[np.ndarray] = None  # (T, vocab) float32


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _atomic_write_text(path: Path, payload: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(payload, encoding="utf-8")
    os.replace(tmp, path)


def write_tensor(path: Union[str, Path], arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError(f"tensor must be (L, T, D), got {arr.shape}")
    L, T, D = arr.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write_bytes(path, _HEADER.pack(MAGIC, FORMAT_VERSION, L, T, D) + arr.tobytes())


def write_corpus_files(
    records: Sequence[ExportRecord],
    out_dir: Union[str, Path],
    vocab_size: int,
    extra_meta: Optional[dict] = None,
) -> Path:
    """Write tokens.jsonl, per-passage tensors, and manifest.json; returns the
    manifest path. ``extra_meta`` (model hash, decode parameters, ...) lands in
    a sibling export_meta.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    token_lines = []
    entries = []
    seen = set()
    for rec in records:
        if rec.passage_id in seen:
            raise ValueError(f"duplicate passage_id {rec.passage_id!r}")
        seen.add(rec.passage_id)
        if any(not (0 <= t < vocab_size) for t in rec.tokens):
            raise ValueError(f"passage {rec.passage_id!r} has tokens outside vocab")
        line = {
            "id": rec.passage_id,
            "tokens": [int(t) for t in rec.tokens],
            "text": rec.text,
            "origin": rec.origin,
            "condition_len": rec.condition_len,
            "split": rec.split,
        }
        if rec.meta:
            line["meta"] = rec.meta
        token_lines.append(json.dumps(line))

        entry = {"passage_id": rec.passage_id, "tokens": "tokens.jsonl"}
        if rec.states is not None:
            states = np.asarray(rec.states, dtype=np.float32)
            if states.ndim != 3 or states.shape[1] != len(rec.tokens):
                raise ValueError(
                    f"passage {rec.passage_id!r}: states shape {states.shape} does not "
                    f"cover {len(rec.tokens)} tokens"
                )
            rel = f"states/{rec.passage_id}.hst"
            write_tensor(out_dir / rel, states)
            entry["states"] = rel
            entry["layers"] = int(states.shape[0])
            entry["dim"] = int(states.shape[2])
        if rec.logits is not None:
            logits = np.asarray(rec.logits, dtype=np.float32)
            if logits.shape != (len(rec.tokens), vocab_size):
                raise ValueError(
                    f"passage {rec.passage_id!r}: logits shape {logits.shape} != "
                    f"({len(rec.tokens)}, {vocab_size})"
                )
            rel = f"logits/{rec.passage_id}.hst"
            write_tensor(out_dir / rel, logits[None])
            entry["logits"] = rel
        entries.append(entry)

    _atomic_write_text(out_dir / "tokens.jsonl", "\n".join(token_lines) + ("\n" if token_lines else ""))
    manifest = {
        "format_version": FORMAT_VERSION,
        "vocab_size": int(vocab_size),
        "entries": entries,
    }
    _atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2))
    if extra_meta is not None:
        _atomic_write_text(
            out_dir / "export_meta.json", json.dumps(extra_meta, indent=2, sort_keys=True)
        )
    return out_dir / "manifest.json"


def read_token_records(path: Union[str, Path]) -> list[dict]:
    """Parse a token JSONL file (one passage record per line)."""
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
