"""Shared fixtures: tiny synthetic corpora, vocabularies and models."""

from __future__ import annotations

import numpy as np
import pytest

from lcmt.data import Vocabulary, build_examples
from lcmt.decode import TokenMasks
from lcmt.model import LengthMode, ModelConfig, TransformerModel
from lcmt.numerics import Rng
from lcmt.synthetic import PIVOT, SyntheticSpec, synth_generate
from lcmt.train import prepare_corpus

TINY_DIMS = dict(n_layers=1, d_model=16, d_ff=32, n_heads=2, dropout=0.0, word_dropout=0.0, max_seq_len=12, max_len_index=16)


@pytest.fixture
def small_spec() -> SyntheticSpec:
    return SyntheticSpec(alphabet_size=8, min_symbols=2, max_symbols=4, p_short=0.5, p_drop=0.2, seed=7)


@pytest.fixture
def small_pairs(small_spec):
    return [(p.source, p.target) for p in synth_generate(small_spec, 40, ("L1", PIVOT), "train")]


@pytest.fixture
def pivot_vocab(small_spec) -> Vocabulary:
    """Every L1 and pivot surface form of the small spec, including continuation pieces."""
    pairs = synth_generate(small_spec, 200, ("L1", PIVOT), "train")
    return Vocabulary.build([p.source for p in pairs] + [p.target for p in pairs])


def make_model(vocab: Vocabulary, mode: LengthMode | str = LengthMode.NONE, seed: int = 0, **overrides) -> TransformerModel:
    dims = {**TINY_DIMS, **overrides}
    config = ModelConfig(vocab_size=len(vocab), length_mode=mode, n_reserved=vocab.n_reserved, **dims)
    return TransformerModel(config, Rng(seed))


@pytest.fixture
def model_factory(pivot_vocab):
    def build(mode: LengthMode | str = LengthMode.NONE, seed: int = 0, vocab: Vocabulary | None = None, **overrides):
        return make_model(vocab or pivot_vocab, mode, seed, **overrides)

    return build


@pytest.fixture
def masks(pivot_vocab) -> TokenMasks:
    return TokenMasks.from_vocabulary(pivot_vocab)


@pytest.fixture
def corpus(small_pairs):
    """(vocab, train examples, valid examples) for one L1->E system."""
    vocab, train, tagged = prepare_corpus({("L1", PIVOT): small_pairs}, LengthMode.DECODER_EMBEDDING, 16)
    valid, _ = build_examples(small_pairs[:8], vocab, max_len_index=16)
    assert not tagged
    return vocab, train, valid


@pytest.fixture
def np_rng() -> np.random.Generator:
    return np.random.default_rng(42)
