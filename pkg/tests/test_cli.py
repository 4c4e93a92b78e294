"""End-to-end tests of the command-line interface on tiny corpora."""

import json

import pytest

from lcmt.cli import build_parser, main
from lcmt.data import compute_target_length, read_sentences

GEN_FLAGS = [
    "--n-train", "40", "--n-valid", "6", "--n-test", "8",
    "--alphabet-size", "8", "--min-symbols", "2", "--max-symbols", "4",
    "--directions", "L1-E", "--test-directions", "L1-E,E-E",
]
MODEL_FLAGS = [
    "--layers", "1", "--d-model", "16", "--d-ff", "32", "--heads", "2",
    "--max-seq-len", "20", "--max-len-index", "24", "--steps", "4", "--save-every", "2",
    "--max-tokens", "256", "--warmup", "2", "--average-k", "2",
]


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--out", str(out), "--seed", "5", *GEN_FLAGS]) == 0
    return out


@pytest.fixture
def model_dir(data_dir, tmp_path):
    out = tmp_path / "model"
    code = main(["train", "--data", str(data_dir), "--langs", "L1-E", "--mode", "decoder_embedding", "--out", str(out), *MODEL_FLAGS])
    assert code == 0
    return out


class TestGenData:
    def test_writes_every_split(self, data_dir):
        names = {p.name for p in data_dir.iterdir()}
        for split in ("train", "valid", "test"):
            assert f"{split}.L1-E.src" in names and f"{split}.L1-E.tgt" in names
        assert "test.E-E.src" in names and "spec.json" in names
        assert len(read_sentences(data_dir / "train.L1-E.src")) == 40
        assert json.loads((data_dir / "spec.json").read_text())["alphabet_size"] == 8

    def test_byte_deterministic(self, data_dir, tmp_path):
        again = tmp_path / "again"
        assert main(["gen-data", "--out", str(again), "--seed", "5", *GEN_FLAGS]) == 0
        for path in data_dir.iterdir():
            assert (again / path.name).read_bytes() == path.read_bytes(), path.name

    def test_invalid_direction(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path), "--directions", "L1-X", *GEN_FLAGS[:6]]) == 2


class TestPipeline:
    def test_train_outputs(self, model_dir, capsys):
        for name in ("vocab.txt", "averaged.lcmt", "last.lcmt", "train_state.npz", "train_log.tsv"):
            assert (model_dir / name).exists(), name

    def test_translate_hard_length_and_evaluate(self, data_dir, model_dir, tmp_path):
        hyps = tmp_path / "hyps.txt"
        code = main([
            "translate", "--model-dir", str(model_dir), "--input", str(data_dir / "test.L1-E.src"),
            "--output", str(hyps), "--constraint", "hard:0.8", "--beam", "2", "--workers", "2",
        ])
        assert code == 0
        sources = read_sentences(data_dir / "test.L1-E.src")
        outputs = read_sentences(hyps)
        assert [len(h) for h in outputs] == [compute_target_length(len(s), 0.8) for s in sources]

        summary = tmp_path / "summary.json"
        code = main([
            "evaluate", "--hyps", str(hyps), "--refs", str(data_dir / "test.L1-E.tgt"),
            "--sources", str(data_dir / "test.L1-E.src"), "--spec", str(data_dir / "spec.json"),
            "--ratio", "0.8", "--budget-aware", "--out", str(summary),
        ])
        assert code == 0
        metrics = json.loads(summary.read_text())["metrics"]
        assert metrics["avg_length_distance"] == 0.0
        assert 0.0 <= metrics["bleu"] <= 100.0
        assert 0.0 <= metrics["content_language_validity"] <= 1.0
        assert metrics["complexity_bpe_token_count"] == sum(len(h) for h in outputs)

    def test_complexity_budget(self, data_dir, model_dir, tmp_path):
        hyps = tmp_path / "hyps.txt"
        code = main([
            "translate", "--model-dir", str(model_dir), "--input", str(data_dir / "test.L1-E.src"),
            "--output", str(hyps), "--constraint", "soft:1.0", "--complexity-budget", "0",
        ])
        assert code == 0
        assert not any(tok.endswith("@@") for line in read_sentences(hyps) for tok in line)

    def test_oracle_needs_references(self, data_dir, model_dir):
        code = main(["translate", "--model-dir", str(model_dir), "--input", str(data_dir / "test.L1-E.src"), "--constraint", "oracle"])
        assert code == 2

    def test_length_model_without_constraint(self, data_dir, model_dir):
        code = main(["translate", "--model-dir", str(model_dir), "--input", str(data_dir / "test.L1-E.src"), "--constraint", "none"])
        assert code == 4

    def test_resume_finished_run(self, data_dir, model_dir):
        code = main(["train", "--data", str(data_dir), "--mode", "decoder_embedding", "--out", str(model_dir), "--resume", *MODEL_FLAGS])
        assert code == 0


class TestMultilingual:
    @pytest.fixture
    def tagged_model(self, tmp_path):
        data = tmp_path / "data"
        flags = [*GEN_FLAGS[:-4], "--directions", "L1-E,E-L1", "--test-directions", "L1-E"]
        assert main(["gen-data", "--out", str(data), "--seed", "5", *flags]) == 0
        out = tmp_path / "model"
        code = main(["train", "--data", str(data), "--langs", "L1-E,E-L1", "--mode", "decoder_embedding", "--out", str(out), *MODEL_FLAGS])
        assert code == 0
        return data, out

    def test_vocabulary_has_tags(self, tagged_model):
        _, model = tagged_model
        forms = (model / "vocab.txt").read_text(encoding="utf-8").split()
        assert "<2E>" in forms and "<2L1>" in forms

    def test_target_language_required(self, tagged_model):
        data, model = tagged_model
        args = ["translate", "--model-dir", str(model), "--input", str(data / "test.L1-E.src"), "--constraint", "hard:0.8"]
        assert main(args) == 2
        assert main([*args, "--target-lang", "E"]) == 0


class TestBpeCommand:
    def test_learn_and_apply(self, tmp_path, capsys):
        corpus = tmp_path / "corpus.txt"
        corpus.write_text("the marshmallow man\nthe small mall\n", encoding="utf-8")
        codes = tmp_path / "codes.txt"
        assert main(["bpe", "--learn", "--merges", "5", "--input", str(corpus), "--codes", str(codes)]) == 0
        assert len(codes.read_text(encoding="utf-8").splitlines()) == 5
        segmented = tmp_path / "out.txt"
        assert main(["bpe", "--apply", "--input", str(corpus), "--codes", str(codes), "--output", str(segmented)]) == 0
        assert len(read_sentences(segmented)) == 2

    def test_needs_a_mode(self, tmp_path):
        assert main(["bpe", "--input", "x", "--codes", str(tmp_path / "c")]) == 2


class TestErrors:
    def test_unknown_config_key(self, tmp_path):
        config = tmp_path / "bad.env"
        config.write_text("colour = red\n", encoding="utf-8")
        assert main(["gen-data", "--config", str(config), "--out", str(tmp_path / "d")]) == 2

    def test_config_file_values_apply(self, tmp_path):
        config = tmp_path / "tiny.env"
        config.write_text("n_train = 3\nn_valid = 1\nn_test = 1\ndirections = L2-E\ntest_directions = L2-E\n", encoding="utf-8")
        out = tmp_path / "d"
        assert main(["gen-data", "--config", str(config), "--out", str(out), "--n-train", "4"]) == 0
        assert len(read_sentences(out / "train.L2-E.src")) == 4
        assert len(read_sentences(out / "valid.L2-E.src")) == 1

    def test_missing_model(self, tmp_path):
        assert main(["translate", "--model-dir", str(tmp_path / "none"), "--input", "x.txt"]) == 3

    def test_missing_training_data(self, tmp_path):
        assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "m")]) == 3

    def test_argparse_errors_exit_2(self):
        with pytest.raises(SystemExit) as info:
            main(["train", "--mode", "sideways"])
        assert info.value.code == 2
        with pytest.raises(SystemExit):
            main([])

    def test_parser_lists_every_command(self):
        parser = build_parser()
        for command in ("gen-data", "bpe", "train", "translate", "evaluate", "experiment"):
            assert parser.parse_args([command]).command == command
