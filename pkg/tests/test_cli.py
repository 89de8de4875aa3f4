import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

import loopscope as ls
from loopscope.cli import main


def _digest(root: Path) -> dict:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def _read_csv(path: Path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def toy_corpus_dir(tmp_path_factory, small_lm):
    """Real toy passages (train + valid) with states, written as a corpus."""
    root = tmp_path_factory.mktemp("corpus")
    train = ls.sample_real_passages(small_lm, 6, 40, seed=1, split="train")
    valid = ls.sample_real_passages(small_lm, 6, 40, seed=2, split="valid", id_prefix="ev")
    entries = [
        ls.CorpusEntry(p, small_lm.hidden_states(p.tokens, p.passage_id))
        for p in train + valid
    ]
    ls.write_corpus(entries, root, vocab_size=small_lm.vocab_size)
    return root


@pytest.fixture(scope="module")
def periodic_corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("periodic")
    entries = []
    for i in range(5):
        toks = (9, 8, 7) + (1 + i, 2 + i) * 6
        entries.append(ls.CorpusEntry(ls.Passage(
            tokens=toks, passage_id=f"loop{i}", origin="generated",
            condition_len=3, split="synthetic",
        )))
    ls.write_corpus(entries, root, vocab_size=32)
    return root


def test_detect_on_periodic_corpus(periodic_corpus_dir, tmp_path):
    out = tmp_path / "out"
    code = main([
        "detect",
        "--manifest", str(periodic_corpus_dir / "manifest.json"),
        "--out-dir", str(out),
    ])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["loop_rate"] == 1.0
    assert summary["seed"] == 0
    rows = [json.loads(l) for l in (out / "loops.jsonl").read_text().splitlines()]
    assert len(rows) == 5
    assert all(r["lambda"] is not None for r in rows)
    assert rows[0]["rho"] == 3  # absolute index: condition_len + loop start
    assert (out / "config.resolved.json").exists()


def test_detect_on_loop_free_corpus(tmp_path):
    root = tmp_path / "corpus"
    entries = [ls.CorpusEntry(ls.Passage(tokens=tuple(range(i, i + 12)), passage_id=f"p{i}"))
               for i in range(4)]
    ls.write_corpus(entries, root, vocab_size=64)
    out = tmp_path / "out"
    assert main(["detect", "--manifest", str(root / "manifest.json"),
                 "--out-dir", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["loop_rate"] == 0.0


def test_detect_rerun_is_byte_identical(periodic_corpus_dir, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    args = ["detect", "--manifest", str(periodic_corpus_dir / "manifest.json")]
    assert main(args + ["--out-dir", str(out_a)]) == 0
    assert main(args + ["--out-dir", str(out_b)]) == 0
    da, db = _digest(out_a), _digest(out_b)
    da.pop("config.resolved.json")
    db.pop("config.resolved.json")  # differs only in the recorded out_dir
    assert da == db


def test_generate_fans_out_per_strategy(toy_corpus_dir, small_lm, tmp_path):
    cfg = {
        "subcommand": "generate",
        "out_dir": str(tmp_path / "gen"),
        "manifest": str(toy_corpus_dir / "manifest.json"),
        "model": {"kind": "toylm", "spec": small_lm.to_spec()},
        "decode": [
            {"strategy": "greedy", "max_new_tokens": 30},
            {"strategy": "sample", "max_new_tokens": 30},
            {"strategy": "top_k", "k": 8, "max_new_tokens": 30},
            {"strategy": "nucleus", "p": 0.9, "max_new_tokens": 30},
        ],
        "analysis": {"condition_len": 10},
        "seed": 5,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["generate", "--config", str(cfg_path)]) == 0
    summary = json.loads((tmp_path / "gen" / "summary.json").read_text())
    assert set(summary["strategies"]) == {"greedy", "sample", "top_k8", "nucleus0.9"}
    for label in summary["strategies"]:
        sub = ls.load_corpus(tmp_path / "gen" / summary["strategies"][label])
        assert len(sub) == 12
        for e in sub.entries:
            assert e.passage.origin == "generated"
            assert e.passage.condition_len == 10
            assert len(e.passage.tokens) == 40
            assert e.passage.meta["strategy"] == label
            assert e.passage.meta["condition_id"]
            assert e.states is not None


def test_generate_rerun_identical(toy_corpus_dir, small_lm, tmp_path):
    cfg = {
        "subcommand": "generate",
        "out_dir": "",
        "manifest": str(toy_corpus_dir / "manifest.json"),
        "model": {"kind": "toylm", "spec": small_lm.to_spec()},
        "decode": [{"strategy": "sample", "max_new_tokens": 25, "seed": 3}],
        "analysis": {"condition_len": 10},
        "seed": 9,
    }
    digests = []
    for name in ("ga", "gb"):
        out = tmp_path / name
        cfg["out_dir"] = str(out)
        cfg_path = tmp_path / f"{name}.json"
        cfg_path.write_text(json.dumps(cfg))
        assert main(["generate", "--config", str(cfg_path)]) == 0
        d = _digest(out)
        d.pop("config.resolved.json")
        digests.append(d)
    assert digests[0] == digests[1]


@pytest.fixture(scope="module")
def generated_corpus(toy_corpus_dir, small_lm, tmp_path_factory):
    out = tmp_path_factory.mktemp("gencorpus")
    cfg = {
        "subcommand": "generate",
        "out_dir": str(out),
        "manifest": str(toy_corpus_dir / "manifest.json"),
        "model": {"kind": "toylm", "spec": small_lm.to_spec()},
        "decode": [
            {"strategy": "greedy", "max_new_tokens": 30},
            {"strategy": "sample", "max_new_tokens": 30, "seed": 1},
        ],
        "analysis": {"condition_len": 10},
        "seed": 7,
    }
    p = out / "cfg.json"
    p.write_text(json.dumps(cfg))
    assert main(["generate", "--config", str(p)]) == 0
    return out


def test_neighborhood_command(toy_corpus_dir, generated_corpus, tmp_path):
    cfg = {
        "subcommand": "neighborhood",
        "out_dir": str(tmp_path / "nbh"),
        "manifest": str(toy_corpus_dir / "manifest.json"),
        "analysis": {
            "layer": 0,
            "radius": 60.0,
            "time_window": 3,
            "mode": "compare_seen",
            "relative": True,
            "extra_manifests": [
                str(generated_corpus / "gen_greedy" / "manifest.json"),
                str(generated_corpus / "gen_sample" / "manifest.json"),
            ],
        },
        "seed": 2,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["neighborhood", "--config", str(cfg_path)]) == 0
    out = tmp_path / "nbh"
    files = {p.name for p in out.glob("*.csv")}
    assert "deviation_layer0_r60_real_compare_seen.csv" in files
    assert "deviation_layer0_r60_greedy_compare_seen.csv" in files
    assert "deviation_layer0_r60_sample_compare_seen.csv" in files
    rows = _read_csv(out / "deviation_layer0_r60_real_compare_seen.csv")
    assert {"step", "mean", "std", "n", "strategy", "mode"} <= set(rows[0])
    meta = json.loads((out / "meta.json").read_text())
    assert meta["support_includes_condition_steps"] is True
    # relative outputs exist for strategies that looped (greedy surely does)
    assert any(name.startswith("relative_layer0") for name in files)


def test_inducingness_command(toy_corpus_dir, small_lm, tmp_path):
    cfg = {
        "subcommand": "inducingness",
        "out_dir": str(tmp_path / "ind"),
        "manifest": str(toy_corpus_dir / "manifest.json"),
        "model": {"kind": "toylm", "spec": small_lm.to_spec()},
        "analysis": {
            "segment_len": 6,
            "n_conditions": 6,
            "condition_len": 10,
            "max_new_tokens": 60,
        },
        "seed": 3,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["inducingness", "--config", str(cfg_path)]) == 0
    out = tmp_path / "ind"
    simple = _read_csv(out / "inducingness_simple.csv")
    assert {r["condition_class"] for r in simple} == {
        "looping_sequence", "first_sentence", "last_sentence"
    }
    repeated = _read_csv(out / "inducingness_repeated.csv")
    assert {r["repeats"] for r in repeated} == {"1", "2", "3"}
    meta = json.loads((out / "meta.json").read_text())
    assert meta["rouge_component"] == "f1"


def test_likelihood_command_uniform(toy_corpus_dir, tmp_path):
    out = tmp_path / "lik"
    cfg = {
        "subcommand": "likelihood",
        "out_dir": str(out),
        "manifest": str(toy_corpus_dir / "manifest.json"),
        "analysis": {"mask_fraction": 0.15, "repetitions": 4},
        "seed": 6,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["likelihood", "--config", str(cfg_path)]) == 0
    rows = _read_csv(out / "likelihood.csv")
    expected = -math.log(32)
    assert all(abs(float(r["mean"]) - expected) < 1e-9 for r in rows)


def test_pca_command(toy_corpus_dir, tmp_path):
    out = tmp_path / "pca"
    assert main([
        "pca", "--manifest", str(toy_corpus_dir / "manifest.json"),
        "--out-dir", str(out),
    ]) == 0
    rows = _read_csv(out / "pca.csv")
    assert {"passage_id", "step", "pc1", "pc2"} <= set(rows[0])
    meta = json.loads((out / "meta.json").read_text())
    assert len(meta["explained_variance_ratio"]) == 2


def test_failure_sets_exit_code_and_marker(tmp_path):
    out = tmp_path / "fail"
    code = main(["detect", "--manifest", str(tmp_path / "missing.json"),
                 "--out-dir", str(out)])
    assert code == 1
    assert (out / "FAILED.txt").exists()


def test_workers_flag_matches_serial(periodic_corpus_dir, tmp_path):
    outs = []
    for name, workers in (("w1", "1"), ("w4", "4")):
        out = tmp_path / name
        assert main(["detect", "--manifest", str(periodic_corpus_dir / "manifest.json"),
                     "--out-dir", str(out), "--workers", workers]) == 0
        d = _digest(out)
        d.pop("config.resolved.json")
        outs.append(d)
    assert outs[0] == outs[1]
