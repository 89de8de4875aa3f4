"""CLI for the exporter, mirroring the analysis toolkit's config style.

A JSON config is the source of truth; flags override single fields. The
resolved config is written into the output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .jobs import ExportJob

SUBCOMMANDS = ("export-traces", "export-scores", "fetch")


def _write_resolved(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8"
    )


def cmd_export_traces(cfg: dict) -> None:
    from .gpt2 import export_traces

    job = ExportJob(
        out_dir=cfg["out_dir"],
        model_name=cfg.get("model", {}).get("name", "gpt2"),
        dataset_path=cfg.get("manifest") or cfg.get("dataset_path"),
        split=cfg.get("analysis", {}).get("split", "valid"),
        condition_len=int(cfg.get("analysis", {}).get("condition_len", 50)),
        decode=(cfg.get("decode") or [{"strategy": "greedy", "max_new_tokens": 462}])[0],
        layers=tuple(cfg.get("analysis", {}).get("layers", [7])),
        min_tokens=int(cfg.get("analysis", {}).get("min_tokens", 512)),
        max_passages=cfg.get("analysis", {}).get("max_passages"),
        export_real=bool(cfg.get("analysis", {}).get("export_real", True)),
        export_logits=bool(cfg.get("analysis", {}).get("export_logits", False)),
        device=cfg.get("device", "cpu"),
        seed=int(cfg.get("seed", 0)),
    )
    _write_resolved(Path(job.out_dir), {"subcommand": "export-traces", **job.to_dict()})
    manifest = export_traces(job)
    print(manifest)


def cmd_export_scores(cfg: dict) -> None:
    from .formats import read_token_records
    from .roberta import export_masked_scores, load_masked_lm

    a = cfg.get("analysis", {})
    out_dir = Path(cfg["out_dir"])
    _write_resolved(out_dir, {"subcommand": "export-scores", **cfg})
    records = read_token_records(cfg.get("manifest") or cfg["dataset_path"])
    if a.get("max_passages"):
        records = records[: int(a["max_passages"])]
    model = load_masked_lm(cfg.get("model", {}).get("name", "roberta-large"),
                           cfg.get("device", "cpu"))
    path = export_masked_scores(
        records,
        model,
        out_dir / "scores.jsonl",
        repetitions=int(a.get("repetitions", 10)),
        mask_fraction=float(a.get("mask_fraction", 0.15)),
        seed=int(cfg.get("seed", 0)),
        batch_size=int(a.get("batch_size", 8)),
        device=cfg.get("device", "cpu"),
    )
    print(path)


def cmd_fetch(cfg: dict) -> None:
    from .datasets import fetch_dataset

    a = cfg.get("analysis", {})
    out_dir = Path(cfg["out_dir"])
    _write_resolved(out_dir, {"subcommand": "fetch", **cfg})
    path = fetch_dataset(
        a.get("split", "valid"),
        out_dir,
        tokenizer_name=cfg.get("model", {}).get("tokenizer", "gpt2"),
        min_tokens=int(a.get("min_tokens", 0)),
        max_passages=a.get("max_passages"),
    )
    print(path)


_HANDLERS = {
    "export-traces": cmd_export_traces,
    "export-scores": cmd_export_scores,
    "fetch": cmd_fetch,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="loopscope-export",
                                     description="HF-model trace and score exporter")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config (source of truth)")
        p.add_argument("--out-dir")
        p.add_argument("--manifest", help="input token JSONL")
        p.add_argument("--seed", type=int)
        p.add_argument("--device")
    args = parser.parse_args(argv)

    cfg = {}
    if args.config:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for key in ("out_dir", "manifest", "seed", "device"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if "out_dir" not in cfg:
        print("error: --out-dir (or out_dir in the config) is required", file=sys.stderr)
        return 1
    try:
        _HANDLERS[args.subcommand](cfg)
    except Exception as e:
        out = Path(cfg["out_dir"])
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "FAILED.txt").write_text(f"{type(e).__name__}: {e}\n", encoding="utf-8")
        except OSError:
            pass
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
