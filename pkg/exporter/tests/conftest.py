from types import SimpleNamespace

import numpy as np
import pytest
import torch


@pytest.fixture(scope="session")
def tiny_gpt2():
    """Randomly initialized small causal LM; no downloads."""
    from transformers import GPT2Config, GPT2LMHeadModel

    torch.manual_seed(0)
    config = GPT2Config(
        vocab_size=89, n_positions=160, n_embd=32, n_layer=3, n_head=2,
        bos_token_id=0, eos_token_id=0,
    )
    model = GPT2LMHeadModel(config)
    model.eval()
    return model


@pytest.fixture(scope="session")
def tiny_roberta():
    from transformers import RobertaConfig, RobertaForMaskedLM

    torch.manual_seed(1)
    config = RobertaConfig(
        vocab_size=60, hidden_size=16, num_hidden_layers=2, num_attention_heads=2,
        intermediate_size=32, max_position_embeddings=140,
        bos_token_id=0, eos_token_id=2, pad_token_id=1, mask_token_id=4,
    )
    model = RobertaForMaskedLM(config)
    model.eval()
    return model


class UniformMaskedLM(torch.nn.Module):
    """Zero logits everywhere: every token has probability 1/vocab."""

    def __init__(self, vocab_size, mask_token_id=4, fail_first_with=None):
        super().__init__()
        self.config = SimpleNamespace(
            vocab_size=vocab_size, mask_token_id=mask_token_id,
            bos_token_id=0, eos_token_id=2,
        )
        self._fail = fail_first_with

    def forward(self, input_ids):
        if self._fail is not None:
            err, self._fail = self._fail, None
            raise RuntimeError(err)
        b, t = input_ids.shape
        return SimpleNamespace(logits=torch.zeros(b, t, self.config.vocab_size))


@pytest.fixture
def uniform_masked_lm():
    return UniformMaskedLM(vocab_size=60)


def make_token_records(rng: np.random.Generator, n, length, vocab=89, prefix="w"):
    return [
        {
            "id": f"{prefix}{i:04d}",
            "tokens": [int(t) for t in rng.integers(1, vocab, size=length)],
            "text": None,
            "origin": "real",
            "condition_len": 0,
            "split": "valid",
        }
        for i in range(n)
    ]
