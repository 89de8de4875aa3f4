import hashlib
import json

import numpy as np
import pytest

import loopscope as ls
from loopscope.trace import CorpusLoadError, TensorFormatError

from conftest import random_entries


def _dir_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.read_bytes())
    return h.hexdigest()


def test_single_entry_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    toks = (3, 1, 2)
    st = ls.StateTrace(passage_id="a", states=rng.standard_normal((2, 3, 4)).astype(np.float32))
    p = ls.Passage(tokens=toks, passage_id="a", text="three tokens", origin="real", split="valid")
    manifest = ls.write_corpus([ls.CorpusEntry(p, st)], tmp_path, vocab_size=10)
    corpus = ls.load_corpus(manifest)
    assert len(corpus) == 1
    got = corpus.entries[0]
    assert got.passage.tokens == toks
    assert len(got.passage) == 3
    assert got.passage.text == "three tokens"
    assert got.passage.split == "valid"
    assert got.states.states.shape == (2, 3, 4)
    assert np.array_equal(got.states.states, st.states)


def test_roundtrip_is_bit_exact_for_many_random_traces(tmp_path):
    rng = np.random.default_rng(42)
    entries = []
    for i in range(100):
        steps = int(rng.integers(2, 20))
        layers = int(rng.integers(1, 4))
        dim = int(rng.integers(1, 8))
        toks = tuple(int(t) for t in rng.integers(0, 99, size=steps))
        st = ls.StateTrace(
            passage_id=f"r{i}",
            states=(rng.standard_normal((layers, steps, dim)) * 100).astype(np.float32),
        )
        entries.append(ls.CorpusEntry(ls.Passage(tokens=toks, passage_id=f"r{i}"), st))
    manifest = ls.write_corpus(entries, tmp_path, vocab_size=99)
    corpus = ls.load_corpus(manifest)
    for orig, got in zip(entries, corpus.entries):
        assert got.passage.tokens == orig.passage.tokens
        # byte-compare oracle on the f32 payloads
        assert got.states.states.tobytes() == orig.states.states.tobytes()


def test_empty_corpus(tmp_path):
    manifest = ls.write_corpus([], tmp_path, vocab_size=10)
    corpus = ls.load_corpus(manifest)
    assert len(corpus) == 0
    assert json.loads(manifest.read_text())["entries"] == []


def test_missing_state_file_names_passage(tmp_path):
    entries = random_entries(np.random.default_rng(1), 2)
    manifest = ls.write_corpus(entries, tmp_path, vocab_size=64)
    (tmp_path / "states" / "p0001.hst").unlink()
    with pytest.raises(CorpusLoadError, match="p0001"):
        ls.load_corpus(manifest)


def test_dimension_mismatch_between_manifest_and_header(tmp_path):
    entries = random_entries(np.random.default_rng(2), 1)
    manifest = ls.write_corpus(entries, tmp_path, vocab_size=64)
    data = json.loads(manifest.read_text())
    data["entries"][0]["dim"] = 999
    manifest.write_text(json.dumps(data))
    with pytest.raises(TensorFormatError, match="dim"):
        ls.load_corpus(manifest)


def test_trace_step_count_must_match_tokens(tmp_path):
    rng = np.random.default_rng(3)
    p = ls.Passage(tokens=(1, 2, 3), passage_id="x")
    st = ls.StateTrace(passage_id="x", states=rng.standard_normal((1, 5, 2)).astype(np.float32))
    with pytest.raises(ls.CorpusError, match="T=5"):
        ls.write_corpus([ls.CorpusEntry(p, st)], tmp_path, vocab_size=10)


def test_token_ids_validated_against_vocab(tmp_path):
    p = ls.Passage(tokens=(1, 2, 300), passage_id="big")
    with pytest.raises(ls.CorpusError, match="vocab_size"):
        ls.write_corpus([ls.CorpusEntry(p)], tmp_path, vocab_size=100)
    # and at load time, when the manifest understates the vocabulary
    manifest = ls.write_corpus([ls.CorpusEntry(p)], tmp_path, vocab_size=1000)
    data = json.loads(manifest.read_text())
    data["vocab_size"] = 100
    manifest.write_text(json.dumps(data))
    with pytest.raises(CorpusLoadError, match="vocab_size"):
        ls.load_corpus(manifest)


def test_duplicate_passage_ids_rejected(tmp_path):
    p = ls.Passage(tokens=(1,), passage_id="dup")
    with pytest.raises(ls.CorpusError, match="dup"):
        ls.write_corpus([ls.CorpusEntry(p), ls.CorpusEntry(p)], tmp_path, vocab_size=4)


def test_corrupt_tensor_file(tmp_path):
    path = tmp_path / "bad.hst"
    path.write_bytes(b"XX" + b"\x00" * 14)
    with pytest.raises(TensorFormatError, match="magic"):
        ls.read_state_file(path)
    rng = np.random.default_rng(0)
    ls.write_state_file(path, rng.standard_normal((1, 2, 3)).astype(np.float32))
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])  # truncate payload
    with pytest.raises(TensorFormatError, match="payload"):
        ls.read_state_file(path)


def test_passage_invariants():
    with pytest.raises(ValueError):
        ls.Passage(tokens=(1, 2), passage_id="a", condition_len=3)
    with pytest.raises(ValueError):
        ls.Passage(tokens=(1, 2), passage_id="a", origin="real", condition_len=1)
    with pytest.raises(ValueError):
        ls.Passage(tokens=(1, -2), passage_id="a")
    with pytest.raises(ValueError):
        ls.Passage(tokens=(1,), passage_id="a", origin="fake")
    p = ls.Passage(tokens=(1, 2, 3), passage_id="g", origin="generated", condition_len=2,
                   split="synthetic")
    assert p.continuation == (3,)


def test_loading_never_mutates_files_and_objects_are_immutable(tmp_path):
    entries = random_entries(np.random.default_rng(4), 3)
    manifest = ls.write_corpus(entries, tmp_path, vocab_size=64)
    before = _dir_digest(tmp_path)
    corpus = ls.load_corpus(manifest)
    assert _dir_digest(tmp_path) == before
    entry = corpus.entries[0]
    assert not entry.states.states.flags.writeable
    with pytest.raises(Exception):
        entry.states.states[0, 0, 0] = 1.0


def test_large_real_corpus_loads_with_full_lengths(tmp_path):
    # Corpus at the data-release scale: 5269 real passages, each >= 512 tokens.
    rng = np.random.default_rng(5)
    entries = []
    for i in range(5269):
        n = 512 + int(rng.integers(0, 3))
        toks = tuple(int(t) for t in rng.integers(0, 50_000, size=n))
        entries.append(ls.CorpusEntry(ls.Passage(tokens=toks, passage_id=f"w{i:05d}")))
    manifest = ls.write_corpus(entries, tmp_path, vocab_size=50_257)
    corpus = ls.load_corpus(manifest)
    assert len(corpus) == 5269
    assert all(len(e.passage.tokens) >= 512 for e in corpus.entries)


def test_logits_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    p = ls.Passage(tokens=(0, 1, 2), passage_id="lg")
    logits = rng.standard_normal((3, 7)).astype(np.float32)
    manifest = ls.write_corpus([ls.CorpusEntry(p, None, logits)], tmp_path, vocab_size=7)
    corpus = ls.load_corpus(manifest)
    assert np.array_equal(corpus.entries[0].logits, logits)
