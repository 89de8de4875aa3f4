"""Fetch the public WebText output subsets and convert them to token JSONL.

The released files are JSONL with raw text per passage; a tokenizer turns them
into the toolkit's token records. The tokenizer is injected so any vocabulary
works (causal-LM tokens for trace export, masked-LM tokens for score export).
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Callable, Optional, Union

logger = logging.getLogger(__name__)

BASE_URL = "https://openaipublic.azureedge.net/gpt-2/output-dataset/v1/"
SPLIT_FILES = {
    "train": "webtext.train.jsonl",
    "valid": "webtext.valid.jsonl",
    "test": "webtext.test.jsonl",
}


def download_split(split: str, out_dir: Union[str, Path], base_url: str = BASE_URL) -> Path:
    """Download one raw split (skipped when already present)."""
    if split not in SPLIT_FILES:
        raise ValueError(f"split must be one of {sorted(SPLIT_FILES)}")
    import requests

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dest = out_dir / SPLIT_FILES[split]
    if dest.exists():
        logger.info("reusing existing %s", dest)
        return dest
    url = base_url + SPLIT_FILES[split]
    logger.info("downloading %s", url)
    tmp = dest.with_name(dest.name + ".tmp")
    with requests.get(url, stream=True, timeout=60) as resp:
        resp.raise_for_status()
        with open(tmp, "wb") as f:
            for chunk in resp.iter_content(chunk_size=1 << 20):
                f.write(chunk)
    tmp.replace(dest)
    return dest


def raw_to_token_jsonl(
    raw_path: Union[str, Path],
    out_path: Union[str, Path],
    tokenizer: Callable[[str], list[int]],
    split: str,
    min_tokens: int = 0,
    max_passages: Optional[int] = None,
) -> Path:
    """Convert a raw text JSONL into the toolkit's token JSONL."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    kept = 0
    with open(raw_path, encoding="utf-8") as src, open(out_path, "w", encoding="utf-8") as dst:
        for i, line in enumerate(src):
            line = line.strip()
            if not line:
                continue
            if max_passages is not None and kept >= max_passages:
                break
            rec = json.loads(line)
            text = rec.get("text", "")
            tokens = tokenizer(text)
            if len(tokens) < min_tokens:
                continue
            dst.write(json.dumps({
                "id": str(rec.get("id", f"{split}-{i}")),
                "tokens": [int(t) for t in tokens],
                "text": text,
                "origin": "real",
                "condition_len": 0,
                "split": split,
            }) + "\n")
            kept += 1
    logger.info("kept %d passages -> %s", kept, out_path)
    return out_path


def fetch_dataset(
    split: str,
    out_dir: Union[str, Path],
    tokenizer: Optional[Callable[[str], list[int]]] = None,
    tokenizer_name: str = "gpt2",
    base_url: str = BASE_URL,
    min_tokens: int = 0,
    max_passages: Optional[int] = None,
) -> Path:
    """Download a split and write ``<split>.tokens.jsonl``; returns its path."""
    if tokenizer is None:
        from transformers import AutoTokenizer

        tok = AutoTokenizer.from_pretrained(tokenizer_name)
        tokenizer = lambda text: tok.encode(text)
    raw = download_split(split, out_dir, base_url)
    return raw_to_token_jsonl(
        raw, Path(out_dir) / f"{split}.tokens.jsonl", tokenizer, split,
        min_tokens=min_tokens, max_passages=max_passages,
    )
