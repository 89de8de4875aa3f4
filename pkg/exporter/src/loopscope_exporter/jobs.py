"""Export job description shared by the trace exporter and its CLI."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional


@dataclass
class ExportJob:
    out_dir: str
    model_name: str = "gpt2"
    dataset_path: Optional[str] = None  # token JSONL (e.g. from fetch_dataset)
    split: str = "valid"
    condition_len: int = 50
    decode: dict = field(default_factory=lambda: {"strategy": "greedy", "max_new_tokens": 462})
    layers: tuple = (7,)
    min_tokens: int = 512  # passages shorter than this are dropped
    max_passages: Optional[int] = None
    export_real: bool = True  # also encode each real passage's states
    export_logits: bool = False
    device: str = "cpu"
    seed: int = 0

    def __post_init__(self):
        if self.condition_len < 1:
            raise ValueError("condition_len must be >= 1")
        self.layers = tuple(int(l) for l in self.layers)
        if not self.layers or any(l < 1 for l in self.layers):
            raise ValueError("layers must be a non-empty list of 1-based block indices")
        strategy = self.decode.get("strategy", "greedy")
        if strategy not in ("greedy", "sample", "top_k", "nucleus"):
            raise ValueError(f"unknown strategy {strategy!r}")
        if strategy == "top_k" and not self.decode.get("k"):
            raise ValueError("top_k requires k")
        if strategy == "nucleus" and not (0 < self.decode.get("p", 0) <= 1):
            raise ValueError("nucleus requires p in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = list(self.layers)
        return d
