"""GPT-2 trace export: generate continuations, capture per-layer states.

For every retained real passage we (a) optionally encode the full passage and
export its states, and (b) generate a continuation from the conditioning
prefix and export the continuation's tokens, states, and optionally logits.
States come from a single forward pass over the finished sequence with
``output_hidden_states=True``; exported layer ``l`` is the output of
transformer block ``l`` (1-based; the embedding row is not a layer here).
Everything is written in 32-bit floats regardless of the compute dtype.
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .formats import ExportRecord, read_token_records, write_corpus_files
from .jobs import ExportJob
from .masking import derive_seed

logger = logging.getLogger(__name__)


def load_causal_lm(model_name: str, device: str = "cpu"):
    from transformers import AutoModelForCausalLM

    model = AutoModelForCausalLM.from_pretrained(model_name)
    model.eval()
    return model.to(device)


def model_weight_hash(model: torch.nn.Module) -> str:
    """SHA-256 over all parameters (name order, float32 bytes)."""
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().to(torch.float32).numpy().tobytes())
    return h.hexdigest()


def _num_blocks(model) -> int:
    return int(model.config.num_hidden_layers)


def _decode_kwargs(decode: dict) -> dict:
    strategy = decode.get("strategy", "greedy")
    if strategy == "greedy":
        return {"do_sample": False}
    kwargs = {"do_sample": True, "top_k": 0}
    if strategy == "top_k":
        kwargs["top_k"] = int(decode["k"])
    elif strategy == "nucleus":
        kwargs["top_p"] = float(decode["p"])
    return kwargs


@torch.no_grad()
def _generate_tokens(model, condition: Sequence[int], decode: dict, seed: int, device: str) -> list[int]:
    max_new = int(decode.get("max_new_tokens", 462))
    ids = torch.tensor([list(condition)], dtype=torch.long, device=device)
    torch.manual_seed(seed)
    out = model.generate(
        ids,
        max_new_tokens=max_new,
        min_new_tokens=max_new,
        pad_token_id=int(model.config.eos_token_id or 0),
        **_decode_kwargs(decode),
    )
    return [int(t) for t in out[0].tolist()]


@torch.no_grad()
def _capture(model, tokens: Sequence[int], layers: Sequence[int], device: str,
             want_logits: bool):
    ids = torch.tensor([list(tokens)], dtype=torch.long, device=device)
    out = model(ids, output_hidden_states=True)
    # hidden_states[0] is the embedding output; block l lives at index l
    states = np.stack(
        [out.hidden_states[l][0].cpu().to(torch.float32).numpy() for l in layers]
    )
    logits = None
    if want_logits:
        logits = out.logits[0].cpu().to(torch.float32).numpy()
    return states, logits


def export_traces(
    job: ExportJob,
    model=None,
    token_records: Optional[list[dict]] = None,
) -> Path:
    """Run an export job; returns the manifest path.

    ``model`` and ``token_records`` may be injected (tests, preloaded models);
    by default the model is pulled from the hub and records come from
    ``job.dataset_path``. Failures are surfaced per passage and skipped, so a
    partial manifest is still valid.
    """
    if model is None:
        model = load_causal_lm(job.model_name, job.device)
    if token_records is None:
        if job.dataset_path is None:
            raise ValueError("job.dataset_path is required when token_records not given")
        token_records = read_token_records(job.dataset_path)

    n_blocks = _num_blocks(model)
    bad = [l for l in job.layers if l > n_blocks]
    if bad:
        raise ValueError(f"layers {bad} exceed the model's {n_blocks} blocks")
    vocab_size = int(model.config.vocab_size)
    label = job.decode.get("strategy", "greedy")

    retained = [
        r for r in token_records
        if len(r["tokens"]) >= job.min_tokens and len(r["tokens"]) >= job.condition_len
    ]
    if job.max_passages is not None:
        retained = retained[: job.max_passages]
    if not retained:
        raise ValueError(
            f"no passages with >= {job.min_tokens} tokens in the dataset"
        )

    records: list[ExportRecord] = []
    failures = 0
    for ordinal, rec in enumerate(retained):
        pid = str(rec["id"])
        tokens = [int(t) for t in rec["tokens"]]
        try:
            if job.export_real:
                states, logits = _capture(model, tokens, job.layers, job.device,
                                          job.export_logits)
                records.append(ExportRecord(
                    passage_id=pid, tokens=tokens, text=rec.get("text"),
                    origin="real", condition_len=0, split=job.split,
                    states=states, logits=logits,
                ))
            condition = tokens[: job.condition_len]
            gen_tokens = _generate_tokens(
                model, condition, job.decode,
                seed=derive_seed(job.seed, f"generate:{label}:{pid}"),
                device=job.device,
            )
            states, logits = _capture(model, gen_tokens, job.layers, job.device,
                                      job.export_logits)
            records.append(ExportRecord(
                passage_id=f"{pid}__{label}", tokens=gen_tokens, origin="generated",
                condition_len=job.condition_len, split=job.split,
                meta={"strategy": label, "condition_id": pid},
                states=states, logits=logits,
            ))
        except Exception as e:
            failures += 1
            logger.warning("passage %s failed: %s", pid, e)

    meta = {
        "model_name": job.model_name,
        "model_hash": model_weight_hash(model),
        "decode": job.decode,
        "layers": list(job.layers),
        "condition_len": job.condition_len,
        "seed": job.seed,
        "passages": len(retained),
        "failures": failures,
        "state_dim": int(model.config.hidden_size),
    }
    return write_corpus_files(records, job.out_dir, vocab_size, extra_meta=meta)
