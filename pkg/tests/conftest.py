"""
Pytest configuration and fixtures for the document translation tests
"""

import os
import sys
from types import SimpleNamespace

import numpy as np
import pytest

# Add src directory to path for imports
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'src')))

from model import ModelConfig, TranslationModel  # noqa: E402
from numerics import ComputationTape, backward  # noqa: E402

SPECIAL_IDS = {"pad_id": 0, "bos_id": 1, "eos_id": 2, "sep_id": 3}


@pytest.fixture
def make_config():
    """
    Factory for tiny model configurations.
    Defaults: d_model 8, 2 heads, 1+1 layers, vocab 16, no dropout.
    """
    def _make(**overrides):
        values = dict(
            d_model=8, n_heads=2, n_layers_enc=1, n_layers_dec=1, ffn_dim=16,
            vocab_src=16, vocab_tgt=16, dropout=0.0, max_positions=64, variant="lst",
        )
        values.update(overrides)
        return ModelConfig(**values)

    return _make


@pytest.fixture
def make_model(make_config):
    """Factory for randomly initialized tiny models in eval mode"""
    def _make(seed=0, **overrides):
        return TranslationModel(make_config(**overrides), seed=seed).eval()

    return _make


@pytest.fixture
def tmp_text(tmp_path):
    """
    Factory fixture for creating temporary text files.
    Content may be a string or a list of lines.
    """
    def _create(filename="input.txt", content=""):
        path = tmp_path / filename
        if isinstance(content, (list, tuple)):
            content = "\n".join(content) + "\n"
        path.write_text(content, encoding="utf-8")
        return path

    return _create


@pytest.fixture
def toy_corpus_files(tmp_text):
    """Two parallel documents (3 and 2 sentences) as source/target files"""
    src = tmp_text("train.src", [
        "le chat dort", "il mange", "le chien court", "",
        "la maison est grande", "elle est rouge",
    ])
    tgt = tmp_text("train.tgt", [
        "the cat sleeps", "it eats", "the dog runs", "",
        "the house is big", "it is red",
    ])
    return src, tgt


@pytest.fixture
def finite_difference():
    """
    Central finite-difference gradient of a scalar function with respect to
    selected entries of a tensor's data.
    """
    def _grad(loss_fn, tensor, indices, eps=1e-5):
        numeric = []
        for index in indices:
            original = tensor.data[index]
            tensor.data[index] = original + eps
            plus = loss_fn()
            tensor.data[index] = original - eps
            minus = loss_fn()
            tensor.data[index] = original
            numeric.append((plus - minus) / (2 * eps))
        return np.array(numeric)

    return _grad


@pytest.fixture
def analytic_gradients():
    """Run one taped forward of `loss_fn` and return the loss value"""
    def _run(model, loss_fn):
        model.params.zero_grad()
        with ComputationTape() as tape:
            loss = loss_fn()
            backward(loss, tape)
        return loss.item()

    return _run


class ScriptedModel:
    """
    Stand-in for TranslationModel in decoding tests: next-token
    distributions come from a function of the generated prefix.
    """

    def __init__(self, vocab_size, distribution):
        self.config = SimpleNamespace(**SPECIAL_IDS)
        self.vocab_size = vocab_size
        self.distribution = distribution
        self.encoded = []

    def encode(self, src_ids):
        self.encoded.append(list(src_ids))
        return list(src_ids)

    def next_token_log_probs(self, memory, prefixes):
        rows = np.full((len(prefixes), self.vocab_size), -np.inf)
        for r, prefix in enumerate(prefixes):
            for token, p in self.distribution(memory, tuple(int(t) for t in prefix[1:])).items():
                if p > 0:
                    rows[r, token] = np.log(p)
        return rows


@pytest.fixture
def scripted_model():
    """Factory: scripted_model(vocab_size, distribution_fn)"""
    return ScriptedModel


@pytest.fixture
def echo_model():
    """Model that translates a chunk into an exact copy of itself"""
    def copy(memory, prefix):
        t = len(prefix)
        return {memory[t] if t < len(memory) else SPECIAL_IDS["eos_id"]: 1.0}

    return ScriptedModel(32, copy)
