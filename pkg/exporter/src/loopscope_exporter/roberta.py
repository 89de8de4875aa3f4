"""Masked-LM score export in the analysis toolkit's score-file schema.

Token sequences here must already live in the masked model's vocabulary (use
the companion corpus written by :func:`datasets.fetch_dataset` with a masked-LM
tokenizer). For each passage and repetition, mask positions are drawn by the
shared RNG contract, the masked sequence is scored in one forward pass, and
the log-likelihood of recovering each original token is recorded as
``{passage_id, repetition, positions, loglik}``. On CUDA out-of-memory the
repetition batch size backs off by halving, with a log line per step.
"""

from __future__ import annotations

import json
import logging
import math
import os
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch

from .masking import mask_positions, passage_mask_rng

logger = logging.getLogger(__name__)


def load_masked_lm(model_name: str = "roberta-large", device: str = "cpu"):
    from transformers import AutoModelForMaskedLM

    model = AutoModelForMaskedLM.from_pretrained(model_name)
    model.eval()
    return model.to(device)


def _is_oom(err: RuntimeError) -> bool:
    return "out of memory" in str(err).lower()


@torch.no_grad()
def _score_batch(model, batch_inputs, batch_positions, batch_tokens, device):
    ids = torch.tensor(batch_inputs, dtype=torch.long, device=device)
    logits = model(input_ids=ids).logits
    logprobs = torch.log_softmax(logits.to(torch.float64), dim=-1)
    out = []
    for row, (positions, originals) in enumerate(zip(batch_positions, batch_tokens)):
        # +1 skips the BOS slot prepended below
        vals = [float(logprobs[row, p + 1, tok]) for p, tok in zip(positions, originals)]
        out.append(vals)
    return out


def export_masked_scores(
    records: Sequence[dict],
    model,
    out_path: Union[str, Path],
    repetitions: int = 10,
    mask_fraction: float = 0.15,
    seed: int = 0,
    mask_token_id: Optional[int] = None,
    bos_token_id: Optional[int] = None,
    eos_token_id: Optional[int] = None,
    batch_size: int = 8,
    device: str = "cpu",
) -> Path:
    """Write a score JSONL for ``records`` (token JSONL dicts); returns its path.

    Same-length passages are required within one batch, so batches are formed
    per passage across repetitions. Token ids must be valid model inputs.
    """
    if not (0.0 < mask_fraction < 1.0):
        raise ValueError("mask_fraction must be in (0, 1)")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    cfg = getattr(model, "config", None)
    if mask_token_id is None:
        mask_token_id = getattr(cfg, "mask_token_id", None)
    if mask_token_id is None:
        raise ValueError("mask_token_id is required (not found on model.config)")
    bos = bos_token_id if bos_token_id is not None else getattr(cfg, "bos_token_id", 0) or 0
    eos = eos_token_id if eos_token_id is not None else getattr(cfg, "eos_token_id", 0) or 0

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = out_path.with_name(out_path.name + ".tmp")

    with open(tmp, "w", encoding="utf-8") as f:
        for rec in records:
            pid = str(rec["id"])
            tokens = [int(t) for t in rec["tokens"]]
            T = len(tokens)
            if T == 0:
                continue
            m = math.ceil(mask_fraction * T)
            rng = passage_mask_rng(seed, pid)
            reps = [(r, mask_positions(T, m, rng)) for r in range(repetitions)]

            done = 0
            bs = max(1, batch_size)
            results = {}
            while done < len(reps):
                chunk = reps[done : done + bs]
                inputs, poss, origs = [], [], []
                for _, positions in chunk:
                    masked = list(tokens)
                    for p in positions:
                        masked[p] = mask_token_id
                    inputs.append([bos] + masked + [eos])
                    poss.append(positions)
                    origs.append([tokens[p] for p in positions])
                try:
                    scored = _score_batch(model, inputs, poss, origs, device)
                except RuntimeError as e:
                    if _is_oom(e) and bs > 1:
                        bs = max(1, bs // 2)
                        logger.warning(
                            "OOM on passage %s; backing off batch size to %d", pid, bs
                        )
                        if device.startswith("cuda"):
                            torch.cuda.empty_cache()
                        continue
                    raise
                for (r, positions), vals in zip(chunk, scored):
                    results[r] = (positions, vals)
                done += len(chunk)

            for r in range(repetitions):
                positions, vals = results[r]
                f.write(json.dumps({
                    "passage_id": pid,
                    "repetition": r,
                    "positions": positions,
                    "loglik": vals,
                }) + "\n")

    os.replace(tmp, out_path)
    return out_path
