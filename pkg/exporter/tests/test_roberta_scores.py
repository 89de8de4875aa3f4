import json
import math

import numpy as np
import pytest

import loopscope
from loopscope import textmetrics as tm
from loopscope_exporter.roberta import export_masked_scores

from conftest import UniformMaskedLM, make_token_records


@pytest.fixture
def records():
    return make_token_records(np.random.default_rng(7), n=3, length=30, vocab=50)


def test_uniform_model_scores_are_flat(tmp_path, records, uniform_masked_lm):
    path = export_masked_scores(records, uniform_masked_lm, tmp_path / "scores.jsonl",
                                repetitions=4, mask_fraction=0.2, seed=5)
    rows = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(rows) == 3 * 4
    expected = -math.log(60)
    for row in rows:
        assert len(row["positions"]) == math.ceil(0.2 * 30)
        assert all(abs(v - expected) < 1e-9 for v in row["loglik"])


def test_scores_feed_the_consumer_likelihood_curve(tmp_path, records, uniform_masked_lm):
    path = export_masked_scores(records, uniform_masked_lm, tmp_path / "scores.jsonl",
                                repetitions=6, mask_fraction=0.15, seed=11)
    passages = [
        loopscope.Passage(tokens=tuple(r["tokens"]), passage_id=r["id"], split="valid")
        for r in records
    ]
    curve = loopscope.masked_likelihood_curve(
        passages, loopscope.FileScorer(path), mask_fraction=0.15, repetitions=6, seed=11
    )
    expected = -math.log(60)
    assert len(curve.steps) > 0
    assert all(abs(m - expected) <= 1e-9 for m in curve.mean)


def test_wrong_seed_breaks_position_contract(tmp_path, records, uniform_masked_lm):
    path = export_masked_scores(records, uniform_masked_lm, tmp_path / "scores.jsonl",
                                repetitions=2, mask_fraction=0.15, seed=11)
    passages = [
        loopscope.Passage(tokens=tuple(r["tokens"]), passage_id=r["id"], split="valid")
        for r in records
    ]
    with pytest.raises(RuntimeError):
        loopscope.masked_likelihood_curve(
            passages, loopscope.FileScorer(path), mask_fraction=0.15, repetitions=2, seed=12
        )


def test_oom_backoff_halves_batch(tmp_path, records, caplog):
    model = UniformMaskedLM(vocab_size=60, fail_first_with="CUDA out of memory")
    with caplog.at_level("WARNING"):
        path = export_masked_scores(records, model, tmp_path / "scores.jsonl",
                                    repetitions=4, mask_fraction=0.2, seed=0,
                                    batch_size=4)
    rows = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(rows) == 12  # complete despite the first-call OOM
    assert any("backing off" in r.message for r in caplog.records)


def test_non_oom_errors_propagate(tmp_path, records):
    model = UniformMaskedLM(vocab_size=60, fail_first_with="illegal instruction")
    with pytest.raises(RuntimeError, match="illegal"):
        export_masked_scores(records, model, tmp_path / "scores.jsonl",
                             repetitions=2, mask_fraction=0.2, seed=0)


def test_real_tiny_masked_lm_integration(tmp_path, tiny_roberta):
    records = make_token_records(np.random.default_rng(8), n=2, length=20, vocab=50)
    path = export_masked_scores(records, tiny_roberta, tmp_path / "scores.jsonl",
                                repetitions=3, mask_fraction=0.15, seed=2)
    rows = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(rows) == 6
    for row in rows:
        assert all(np.isfinite(v) and v <= 0 for v in row["loglik"])


def test_parameter_validation(tmp_path, records, uniform_masked_lm):
    with pytest.raises(ValueError):
        export_masked_scores(records, uniform_masked_lm, tmp_path / "s.jsonl",
                             repetitions=0)
    with pytest.raises(ValueError):
        export_masked_scores(records, uniform_masked_lm, tmp_path / "s.jsonl",
                             mask_fraction=1.0)
    bare = UniformMaskedLM(vocab_size=60)
    bare.config.mask_token_id = None
    with pytest.raises(ValueError, match="mask_token_id"):
        export_masked_scores(records, bare, tmp_path / "s.jsonl")
