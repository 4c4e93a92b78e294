"""Tests for corpus preparation and the training loop."""

import numpy as np
import pandas as pd
import pytest

from conftest import make_model
from lcmt.checkpoint import load_checkpoint
from lcmt.errors import ConfigError, DataError
from lcmt.model import LengthMode
from lcmt.numerics import AdamConfig, Rng
from lcmt.synthetic import PIVOT, synth_generate
from lcmt.train import TrainConfig, Trainer, prepare_corpus

ADAM = AdamConfig(lr=0.005, warmup_steps=2)


def _trainer(corpus, out_dir, steps=6, seed=11):
    vocab, train, valid = corpus
    model = make_model(vocab, LengthMode.DECODER_EMBEDDING, seed=seed, dropout=0.1, word_dropout=0.1)
    config = TrainConfig(steps=steps, max_tokens=64, save_every=3, average_k=2, log_every=2, progress=False)
    return Trainer(model, train, valid, config, ADAM, Rng(seed), out_dir)


class TestPrepareCorpus:
    def test_single_target_is_untagged(self, small_pairs):
        vocab, examples, tagged = prepare_corpus({("L1", PIVOT): small_pairs}, LengthMode.NONE, 16)
        assert not tagged and vocab.languages == []
        assert len(examples) == len(small_pairs)
        assert all(e.target_length == len(e.tgt_ids) for e in examples)

    def test_multiple_targets_are_tagged(self, small_spec, small_pairs):
        reverse = [(p.source, p.target) for p in synth_generate(small_spec, 20, (PIVOT, "L1"), "train")]
        vocab, examples, tagged = prepare_corpus({("L1", PIVOT): small_pairs, (PIVOT, "L1"): reverse}, "source_token", 16)
        assert tagged and vocab.languages == ["E", "L1"]
        first = vocab.decode(examples[0].src_ids)
        assert first[0] == "<2E>" and first[1] == f"<len_{examples[0].target_length}>"
        assert vocab.decode(examples[-1].src_ids)[0] == "<2L1>"

    def test_forced_tagging_and_shared_vocabulary(self, small_pairs):
        vocab, _, _ = prepare_corpus({("L1", PIVOT): small_pairs}, LengthMode.NONE, 16, tag=True)
        assert vocab.languages == ["E"]
        again, examples, tagged = prepare_corpus({("L1", PIVOT): small_pairs[:5]}, LengthMode.NONE, 16, tag=True, vocab=vocab)
        assert again is vocab and tagged and len(examples) == 5

    def test_no_directions(self):
        with pytest.raises(DataError):
            prepare_corpus({}, LengthMode.NONE, 16)


class TestTrainer:
    def test_writes_checkpoints_and_logs(self, corpus, tmp_path):
        result = _trainer(corpus, tmp_path).run()
        for name in ("checkpoints/step_000003.lcmt", "checkpoints/step_000006.lcmt", "last.lcmt", "train_state.npz", "averaged.lcmt"):
            assert (tmp_path / name).exists(), name
        assert [row["step"] for row in result.train_log] == list(range(1, 7))
        assert [row["step"] for row in result.valid_log] == [3, 6]
        assert len(result.best) == 2
        log = pd.read_csv(tmp_path / "train_log.tsv", sep="\t")
        assert list(log.columns) == ["step", "loss", "lr"] and len(log) == 6

    def test_averaged_is_mean_of_best(self, corpus, tmp_path):
        result = _trainer(corpus, tmp_path).run()
        saved = [load_checkpoint(tmp_path / "checkpoints" / f"step_{step:06d}.lcmt")[1] for _, step in result.best]
        _, averaged = load_checkpoint(tmp_path / "averaged.lcmt")
        for name, value in averaged.items():
            expected = np.mean([s[name].astype(np.float64) for s in saved], axis=0)
            np.testing.assert_allclose(value, expected, atol=1e-7)

    def test_best_sorted_by_validation_loss(self, corpus):
        vocab, train, valid = corpus
        model = make_model(vocab, LengthMode.DECODER_EMBEDDING, seed=2)
        config = TrainConfig(steps=8, max_tokens=64, save_every=2, average_k=3, progress=False)
        result = Trainer(model, train, valid, config, ADAM, Rng(2)).run()
        losses = [loss for loss, _ in result.best]
        assert len(losses) == 3 and losses == sorted(losses)
        assert result.averaged

    def test_deterministic(self, corpus):
        first = _trainer(corpus, None).run()
        second = _trainer(corpus, None).run()
        assert first.losses == second.losses

    def test_loss_decreases(self, corpus):
        vocab, train, valid = corpus
        model = make_model(vocab, LengthMode.DECODER_EMBEDDING, seed=4)
        config = TrainConfig(steps=60, max_tokens=128, save_every=30, average_k=1, progress=False)
        result = Trainer(model, train, valid, config, AdamConfig(lr=0.01, warmup_steps=10), Rng(4)).run()
        losses = [row["loss"] for row in result.train_log]
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

    def test_resume_reproduces_uninterrupted_run(self, corpus, tmp_path):
        full = _trainer(corpus, tmp_path / "full").run()
        _trainer(corpus, tmp_path / "split", steps=3).run()
        resumed = _trainer(corpus, tmp_path / "split", steps=6).run(resume=True)
        assert resumed.losses == full.losses
        for name, value in full.averaged.items():
            np.testing.assert_array_equal(resumed.averaged[name], value)

    def test_resume_needs_state(self, corpus, tmp_path):
        with pytest.raises(FileNotFoundError):
            _trainer(corpus, tmp_path).run(resume=True)
        with pytest.raises(ConfigError):
            _trainer(corpus, None).run(resume=True)

    def test_needs_examples(self, corpus):
        vocab, train, _ = corpus
        model = make_model(vocab, LengthMode.DECODER_EMBEDDING)
        with pytest.raises(DataError):
            Trainer(model, train, [], TrainConfig(progress=False), ADAM, Rng(0))
        with pytest.raises(DataError):
            Trainer(model, [], train, TrainConfig(progress=False), ADAM, Rng(0))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(steps=0)
