"""Batch front door: subcommands wiring corpora, models, and analyses into
reproducible runs.

A JSON config file is the source of truth; command-line flags override single
fields. Every run writes the fully resolved config into its output directory,
and deterministic pipelines reproduce their outputs byte-identically from it.
One top-level seed is split per stage and per passage via stable hashing, so
a single number reproduces a whole experiment. Outputs are UTF-8 CSV/JSONL.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

from . import decode, loopdetect, neighborhood, textmetrics, toylm, trace
from .seeding import derive_seed

ENV_WORKERS = "LOOPSCOPE_WORKERS"

SUBCOMMANDS = ("detect", "generate", "neighborhood", "inducingness", "likelihood", "pca")


@dataclass
class RunConfig:
    subcommand: str
    out_dir: str
    manifest: Optional[str] = None
    model: Optional[dict] = None  # {"kind": "toylm", "spec": {...}}
    decode: list = field(default_factory=list)  # list of DecodeConfig dicts
    analysis: dict = field(default_factory=dict)
    seed: int = 0
    workers: int = 0  # 0: use LOOPSCOPE_WORKERS or 1
    text_map: Optional[str] = None  # JSON file: token id -> string

    def resolved_workers(self) -> int:
        if self.workers > 0:
            return self.workers
        env = os.environ.get(ENV_WORKERS)
        return max(1, int(env)) if env else 1

    def validate(self) -> None:
        if self.subcommand not in SUBCOMMANDS:
            raise ValueError(f"unknown subcommand {self.subcommand!r}")
        for key in ("manifest", "text_map"):
            path = getattr(self, key)
            if path is not None and not Path(path).exists():
                raise FileNotFoundError(f"{key} does not exist: {path}")
        if self.model is not None and self.model.get("kind") not in ("toylm",):
            raise ValueError(f"unsupported model kind {self.model.get('kind')!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**data)


def _load_model(config: RunConfig) -> toylm.SelfReinforcingLM:
    if config.model is None or config.model.get("kind") != "toylm":
        raise ValueError("this subcommand requires a toy-LM model spec")
    return toylm.SelfReinforcingLM.from_spec(config.model.get("spec", {}))


def _load_text_map(config: RunConfig):
    if config.text_map is None:
        return None
    raw = json.loads(Path(config.text_map).read_text(encoding="utf-8"))
    return {int(k): str(v) for k, v in raw.items()}


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True), encoding="utf-8")


def _render_tokens(tokens, text_map) -> str:
    if text_map is None:
        return " ".join(str(t) for t in tokens)
    return "".join(text_map.get(int(t), f"<{t}>") for t in tokens)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_detect(config: RunConfig, out_dir: Path) -> None:
    """Loop report: one JSONL row per passage plus a loop_rate summary.

    Detection runs on the post-condition suffix; reported rho/lambda are
    absolute indices into the full token sequence.
    """
    corpus = trace.load_corpus(config.manifest)
    text_map = _load_text_map(config)
    workers = config.resolved_workers()

    def detect_one(entry):
        p = entry.passage
        spec = loopdetect.detect_loop(p.continuation)
        return p, spec

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(detect_one, corpus.entries))
    else:
        results = [detect_one(e) for e in corpus.entries]

    n_looping = 0
    with open(out_dir / "loops.jsonl", "w", encoding="utf-8") as f:
        for p, spec in results:
            row = {"passage_id": p.passage_id, "rho": None, "lambda": None}
            if spec is not None:
                n_looping += 1
                row["rho"] = p.condition_len + spec.start
                row["lambda"] = spec.period
                row["looping_tokens"] = list(spec.loop_tokens)
                row["looping_text"] = _render_tokens(spec.loop_tokens, text_map)
                if text_map is not None:
                    rotated = loopdetect.rotate_to_sentence_start(spec, text_map)
                    row["rotated_text"] = _render_tokens(rotated, text_map)
            f.write(json.dumps(row) + "\n")

    _write_json(
        out_dir / "summary.json",
        {
            "passages": len(corpus),
            "looping": n_looping,
            "loop_rate": n_looping / len(corpus) if len(corpus) else 0.0,
            "seed": config.seed,
        },
    )


def cmd_generate(config: RunConfig, out_dir: Path) -> None:
    """One generated corpus per decode config, conditioned on real passages."""
    corpus = trace.load_corpus(config.manifest)
    lm = _load_model(config)
    cond_len = int(config.analysis.get("condition_len", 50))
    emit_states = bool(config.analysis.get("emit_states", True))
    reals = [e.passage for e in corpus.entries if e.passage.origin == "real"]
    if not reals:
        raise ValueError("generate requires real passages to condition on")
    decode_configs = [decode.DecodeConfig.from_dict(d) for d in config.decode]
    if not decode_configs:
        raise ValueError("generate requires at least one decode config")

    manifests = {}
    for dc in decode_configs:
        label = dc.label
        entries = []
        for p in reals:
            if len(p.tokens) < cond_len:
                continue
            condition = p.tokens[:cond_len]
            passage = decode.generate(
                lm,
                condition,
                dc,
                passage_id=f"{p.passage_id}__{label}",
                seed=derive_seed(config.seed, f"generate:{label}:{p.passage_id}"),
                split=p.split if p.split != "train" else "synthetic",
                meta={"strategy": label, "condition_id": p.passage_id},
            )
            states = (
                lm.hidden_states(passage.tokens, passage.passage_id) if emit_states else None
            )
            entries.append(trace.CorpusEntry(passage=passage, states=states))
        sub = out_dir / f"gen_{label}"
        manifest = trace.write_corpus(entries, sub, vocab_size=corpus.vocab_size)
        manifests[label] = str(manifest.relative_to(out_dir))

    _write_json(
        out_dir / "summary.json",
        {
            "strategies": manifests,
            "condition_len": cond_len,
            "conditions": len(reals),
            "seed": config.seed,
        },
    )


def _corpus_union(config: RunConfig) -> list[trace.CorpusEntry]:
    """Entries from the main manifest plus any in analysis.extra_manifests."""
    paths = [config.manifest] + list(config.analysis.get("extra_manifests", []))
    entries: list[trace.CorpusEntry] = []
    for p in paths:
        if p is None:
            continue
        entries.extend(trace.load_corpus(p).entries)
    if not entries:
        raise ValueError("no corpus entries found")
    return entries


def cmd_neighborhood(config: RunConfig, out_dir: Path) -> None:
    """Deviation CSVs: per-strategy absolute curves under a support mode, and
    optionally loop-aligned relative curves with their real-continuation
    difference."""
    entries = _corpus_union(config)
    a = config.analysis
    ncfg = neighborhood.NeighborhoodConfig(
        layer=int(a.get("layer", neighborhood.DEFAULT_LAYER)),
        radius=float(a.get("radius", neighborhood.DEFAULT_RADIUS)),
        time_window=int(a.get("time_window", neighborhood.DEFAULT_TIME_WINDOW)),
        n_steps=int(a.get("n_steps", neighborhood.ABSOLUTE_STEP_COUNT)),
        unseen_subsets=int(a.get("unseen_subsets", 10)),
        unseen_repeats=int(a.get("unseen_repeats", 3)),
        seed=config.seed,
        workers=config.resolved_workers(),
    )
    modes = a.get("modes", [a.get("mode", "compare_seen")])
    header = ["step", "mean", "std", "n", "strategy", "mode"]

    meta = {
        "seed": config.seed,
        "layer": ncfg.layer,
        "radius": ncfg.radius,
        "time_window": ncfg.time_window,
        "support_includes_condition_steps": True,
        "modes": list(modes),
    }

    for mode in modes:
        curves = neighborhood.compare_protocol(entries, mode, ncfg)
        for strat, curve in sorted(curves.items()):
            rows = [[s, m, sd, n, strat, mode] for s, m, sd, n in curve.points]
            _write_csv(
                out_dir / f"deviation_layer{ncfg.layer}_r{ncfg.radius:g}_{strat}_{mode}.csv",
                header,
                rows,
            )

    if a.get("relative", False):
        _relative_curves(entries, ncfg, a, out_dir, header)
        meta["relative_offsets"] = list(neighborhood.RELATIVE_OFFSETS)

    _write_json(out_dir / "meta.json", meta)


def _relative_curves(entries, ncfg, analysis, out_dir: Path, header) -> None:
    support_splits = set(analysis.get("support_splits", ["train"]))
    support = [
        e
        for e in entries
        if e.states is not None
        and e.passage.origin == "real"
        and "strategy" not in e.passage.meta
        and e.passage.split in support_splits
    ]
    if not support:
        raise ValueError(f"no real support entries in splits {sorted(support_splits)}")
    index = neighborhood.build_support([e.states for e in support], ncfg.layer)

    real_by_id = {
        e.passage.passage_id: e
        for e in entries
        if e.states is not None and e.passage.origin == "real"
    }
    generated = [
        e for e in entries if e.states is not None and e.passage.origin == "generated"
    ]
    by_strategy: dict[str, list] = {}
    for e in generated:
        by_strategy.setdefault(e.passage.meta.get("strategy", "generated"), []).append(e)

    for strat, es in sorted(by_strategy.items()):
        gen_traces, real_traces, specs = [], [], []
        for e in es:
            spec = loopdetect.detect_loop(e.passage.continuation)
            if spec is None:
                continue
            # Align at the verbatim-repetition onset, absolute in the passage.
            anchored = loopdetect.LoopSpec(
                start=e.passage.condition_len + spec.start,
                period=spec.period,
                loop_tokens=spec.loop_tokens,
            )
            cond = real_by_id.get(e.passage.meta.get("condition_id"))
            gen_traces.append(e.states)
            specs.append(anchored)
            real_traces.append(cond.states if cond is not None else None)
        if not gen_traces:
            continue
        curve_gen = neighborhood.deviation_curve(
            index,
            gen_traces,
            ncfg.layer,
            ncfg.radius,
            ncfg.time_window,
            axis="relative_to_loop_start",
            loop_specs=specs,
            workers=ncfg.workers,
        )
        rows = [[s, m, sd, n, strat, "relative"] for s, m, sd, n in curve_gen.points]
        _write_csv(
            out_dir / f"relative_layer{ncfg.layer}_r{ncfg.radius:g}_{strat}.csv",
            header,
            rows,
        )
        paired = [(tr, sp) for tr, sp in zip(real_traces, specs) if tr is not None]
        if paired:
            curve_real = neighborhood.deviation_curve(
                index,
                [tr for tr, _ in paired],
                ncfg.layer,
                ncfg.radius,
                ncfg.time_window,
                axis="relative_to_loop_start",
                loop_specs=[sp for _, sp in paired],
                workers=ncfg.workers,
            )
            diff = curve_gen.difference(curve_real)
            rows = [
                [s, m, sd, n, strat, "relative_minus_real"] for s, m, sd, n in diff.points
            ]
            _write_csv(
                out_dir / f"relative_diff_layer{ncfg.layer}_r{ncfg.radius:g}_{strat}.csv",
                header,
                rows,
            )


def _segment_conditions(entries, segment_len: int):
    """first/last-sentence condition sets; token-window fallback without text."""
    firsts, lasts = [], []
    for e in entries:
        p = e.passage
        if p.origin != "real" or len(p.tokens) < 2 * segment_len:
            continue
        firsts.append(p.tokens[:segment_len])
        lasts.append(p.tokens[-segment_len:])
    return firsts, lasts


def cmd_inducingness(config: RunConfig, out_dir: Path) -> None:
    """Tables-shaped CSVs: plain and repeated condition echo scores."""
    entries = _corpus_union(config)
    lm = _load_model(config)
    a = config.analysis
    segment_len = int(a.get("segment_len", 10))
    n_conditions = int(a.get("n_conditions", 100))
    cond_len = int(a.get("condition_len", 50))
    max_new = int(a.get("max_new_tokens", 256))

    reals = [e for e in entries if e.passage.origin == "real"]
    if not reals:
        raise ValueError("inducingness requires real passages")

    # Looping-sequence conditions come from greedy continuations of real
    # prefixes, rotated to a sentence start when text is available.
    text_map = _load_text_map(config)
    greedy = decode.DecodeConfig(strategy="greedy", max_new_tokens=max_new)
    loops = []
    for e in reals:
        if len(loops) >= n_conditions:
            break
        p = e.passage
        if len(p.tokens) < cond_len:
            continue
        gen = decode.generate(lm, p.tokens[:cond_len], greedy, passage_id=f"{p.passage_id}__g")
        spec = loopdetect.detect_loop(gen.continuation)
        if spec is None:
            continue
        toks = (
            loopdetect.rotate_to_sentence_start(spec, text_map)
            if text_map is not None
            else spec.loop_tokens
        )
        if len(toks) >= 2:
            loops.append(toks)
    if not loops:
        raise ValueError("no looping sequences found; increase n_conditions or max_new_tokens")

    firsts, lasts = _segment_conditions(reals, segment_len)
    conditions = {
        "looping_sequence": loops,
        "first_sentence": firsts[:n_conditions],
        "last_sentence": lasts[:n_conditions],
    }

    gen_cfg = decode.DecodeConfig(
        strategy="greedy", max_new_tokens=max_new, seed=config.seed
    )
    simple = textmetrics.inducingness_simple(conditions, lm, gen_cfg)

    # Fixed neutral context: the opening tokens of one seed-picked real passage.
    ctx_source = reals[derive_seed(config.seed, "inducing-context") % len(reals)]
    context = ctx_source.passage.tokens[: 5 * segment_len]
    repeated = textmetrics.inducingness_repeated(context, conditions, lm, gen_cfg)

    header = ["condition_class", "repeats", "mean", "std", "n"]
    _write_csv(
        out_dir / "inducingness_simple.csv",
        header,
        [[r.condition_class, r.repeats, r.mean, r.std, r.n] for r in simple],
    )
    _write_csv(
        out_dir / "inducingness_repeated.csv",
        header,
        [[r.condition_class, r.repeats, r.mean, r.std, r.n] for r in repeated],
    )
    _write_json(
        out_dir / "meta.json",
        {
            "seed": config.seed,
            "rouge_component": "f1",
            "note": "mean/std aggregate LCS F1; precision/recall are derivable from scores",
            "n_looping_conditions": len(loops),
            "segment_len": segment_len,
            "context_source": ctx_source.passage.passage_id,
        },
    )


def cmd_likelihood(config: RunConfig, out_dir: Path) -> None:
    """Per-time-step masked log-likelihood CSV."""
    corpus = trace.load_corpus(config.manifest)
    a = config.analysis
    scorer_spec = a.get("scorer", {"kind": "uniform"})
    if scorer_spec.get("kind") == "uniform":
        scorer = textmetrics.UniformScorer(corpus.vocab_size)
    elif scorer_spec.get("kind") == "file":
        scorer = textmetrics.FileScorer(scorer_spec["path"])
    else:
        raise ValueError(f"unknown scorer kind {scorer_spec.get('kind')!r}")

    curve = textmetrics.masked_likelihood_curve(
        corpus.passages,
        scorer,
        mask_fraction=float(a.get("mask_fraction", 0.15)),
        repetitions=int(a.get("repetitions", 10)),
        seed=config.seed,
    )
    _write_csv(
        out_dir / "likelihood.csv",
        ["step", "mean", "n"],
        list(zip(curve.steps, curve.mean, curve.n)),
    )
    _write_json(
        out_dir / "meta.json",
        {"seed": config.seed, "scorer": scorer_spec, "passages": len(corpus)},
    )


def cmd_pca(config: RunConfig, out_dir: Path) -> None:
    """Project one layer's states onto principal components, tagged by step."""
    entries = _corpus_union(config)
    a = config.analysis
    layer = int(a.get("layer", 0))
    components = int(a.get("components", 2))
    stride = max(1, int(a.get("stride", 1)))

    rows_meta, vectors = [], []
    for e in entries:
        if e.states is None or e.passage.origin != "real":
            continue
        for t in range(0, e.states.num_steps, stride):
            rows_meta.append((e.passage.passage_id, t))
            vectors.append(e.states.states[layer, t])
    if len(vectors) < 2:
        raise ValueError("pca requires at least 2 states; check layer/manifest")

    proj = neighborhood.pca_project(vectors, components)
    header = ["passage_id", "step"] + [f"pc{i + 1}" for i in range(components)]
    rows = [
        [pid, t] + [float(v) for v in proj.points[i]]
        for i, (pid, t) in enumerate(rows_meta)
    ]
    _write_csv(out_dir / "pca.csv", header, rows)
    _write_json(
        out_dir / "meta.json",
        {
            "seed": config.seed,
            "layer": layer,
            "explained_variance_ratio": [float(r) for r in proj.explained_variance_ratio],
        },
    )


# ---------------------------------------------------------------------------
# Entry point

_HANDLERS = {
    "detect": cmd_detect,
    "generate": cmd_generate,
    "neighborhood": cmd_neighborhood,
    "inducingness": cmd_inducingness,
    "likelihood": cmd_likelihood,
    "pca": cmd_pca,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loopscope", description="Text-degeneration diagnostics pipelines"
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", help="JSON run config (source of truth)")
        p.add_argument("--manifest", help="corpus manifest path")
        p.add_argument("--out-dir", help="output directory")
        p.add_argument("--seed", type=int, help="top-level seed")
        p.add_argument("--workers", type=int, help=f"worker count (default ${ENV_WORKERS} or 1)")
        p.add_argument("--text-map", help="JSON token-id -> string file")
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        config = RunConfig.from_file(args.config)
        config.subcommand = args.subcommand
    else:
        if not args.out_dir:
            raise ValueError("--out-dir is required when no --config is given")
        config = RunConfig(subcommand=args.subcommand, out_dir=args.out_dir)
    for key, attr in (
        ("manifest", "manifest"),
        ("out_dir", "out_dir"),
        ("seed", "seed"),
        ("workers", "workers"),
        ("text_map", "text_map"),
    ):
        val = getattr(args, key if key != "out_dir" else "out_dir", None)
        if val is not None:
            setattr(config, attr, val)
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
        config.validate()
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.resolved.json").write_text(config.to_json(), encoding="utf-8")
        _HANDLERS[config.subcommand](config, out_dir)
    except Exception as e:
        out = Path(config.out_dir) if "config" in locals() and config.out_dir else None
        if out is not None:
            try:
                out.mkdir(parents=True, exist_ok=True)
                (out / "FAILED.txt").write_text(
                    f"{type(e).__name__}: {e}\n", encoding="utf-8"
                )
            except OSError:
                pass
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
