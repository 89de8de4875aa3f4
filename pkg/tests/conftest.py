import numpy as np
import pytest

import loopscope as ls


@pytest.fixture(scope="session")
def toy_lm():
    """Default-geometry toy LM shared across tests (immutable)."""
    return ls.SelfReinforcingLM(seed=11)


@pytest.fixture(scope="session")
def small_lm():
    """Tiny vocabulary variant for fast unit tests."""
    return ls.SelfReinforcingLM(vocab_size=32, window=16, state_dim=8, seed=7)


def random_entries(rng: np.random.Generator, n: int, vocab: int = 64, layers: int = 2,
                   steps: int = 10, dim: int = 4, with_states: bool = True):
    entries = []
    for i in range(n):
        toks = tuple(int(t) for t in rng.integers(0, vocab, size=steps))
        p = ls.Passage(tokens=toks, passage_id=f"p{i:04d}", origin="real", split="train")
        st = None
        if with_states:
            arr = rng.standard_normal((layers, steps, dim)).astype(np.float32)
            st = ls.StateTrace(passage_id=p.passage_id, states=arr)
        entries.append(ls.CorpusEntry(passage=p, states=st))
    return entries
