"""Tests for the synthetic languages and corpus generator."""

import pytest

from lcmt.errors import ConfigError, DataError
from lcmt.numerics import Rng
from lcmt.synthetic import (
    PIVOT,
    SyntheticLanguages,
    SyntheticSpec,
    content_decode,
    oracle_compression,
    parse_direction,
    synth_generate,
)


class TestRendering:
    def test_pivot_lengths_span_short_to_long(self, small_spec):
        languages = SyntheticLanguages(small_spec)
        symbols = (0, 3, 5, 7)
        assert len(languages.render(symbols, PIVOT, [False] * 4)) == 4
        assert len(languages.render(symbols, PIVOT, [True] * 4)) == 8
        assert languages.render((7,), PIVOT, [True]) == ["t07@@", "t07"]
        assert languages.render((7,), "L2") == ["l2_07"]

    def test_decode_inverts_render(self, small_spec):
        languages = SyntheticLanguages(small_spec)
        rng = Rng(3)
        for _ in range(50):
            symbols = tuple(int(s) for s in rng.permutation(small_spec.alphabet_size)[:4])
            for lang in small_spec.languages:
                decoded = languages.decode(languages.render_random(symbols, lang, rng), lang)
                assert decoded.symbols == symbols and decoded.valid

    def test_foreign_tokens_are_violations(self, small_spec):
        decoded = content_decode(["u01", "l1_02", "t03@@", "t03", "zz"], small_spec)
        assert decoded.symbols == (1, 3)
        assert decoded.violations == 2 and not decoded.valid

    def test_dangling_continuation_counts_once(self, small_spec):
        assert content_decode(["t03@@", "u04"], small_spec).symbols == (3, 4)

    def test_vocabularies_are_disjoint(self, small_spec):
        languages = SyntheticLanguages(small_spec)
        vocabularies = [languages.vocabulary(lang) for lang in small_spec.languages]
        assert len(vocabularies[0]) == 3 * small_spec.alphabet_size
        for i, a in enumerate(vocabularies):
            for b in vocabularies[i + 1 :]:
                assert not a & b

    def test_unknown_language(self, small_spec):
        with pytest.raises(DataError):
            SyntheticLanguages(small_spec).render((1,), "L9")


class TestGenerate:
    def test_deterministic(self, small_spec):
        assert synth_generate(small_spec, 30, "L1-E") == synth_generate(small_spec, 30, "L1-E")

    def test_splits_and_directions_differ(self, small_spec):
        train = synth_generate(small_spec, 30, "L1-E", "train")
        assert train != synth_generate(small_spec, 30, "L1-E", "valid")
        assert [p.symbols for p in train] != [p.symbols for p in synth_generate(small_spec, 30, "L2-E", "train")]

    def test_prefix_stable(self, small_spec):
        assert synth_generate(small_spec, 10, "L1-E") == synth_generate(small_spec, 30, "L1-E")[:10]

    def test_lengths_without_drops(self):
        spec = SyntheticSpec(alphabet_size=20, min_symbols=3, max_symbols=6, p_drop=0.0, seed=2)
        for pair in synth_generate(spec, 200, "L1-E"):
            k = len(pair.symbols)
            assert spec.min_symbols <= k <= spec.max_symbols
            assert len(set(pair.symbols)) == k
            assert len(pair.source) == k
            assert k <= len(pair.target) <= 2 * k
            assert pair.kept == pair.symbols

    def test_kept_is_a_suffix(self, small_spec):
        drops = 0
        for pair in synth_generate(small_spec, 300, "L1-E"):
            assert 1 <= len(pair.kept) <= len(pair.symbols)
            assert pair.symbols[len(pair.symbols) - len(pair.kept) :] == pair.kept
            assert content_decode(pair.target, small_spec).symbols == pair.kept
            drops += len(pair.symbols) - len(pair.kept)
        assert drops > 0

    def test_non_pivot_targets_keep_everything(self, small_spec):
        for pair in synth_generate(small_spec, 50, "E-L1"):
            assert pair.kept == pair.symbols
            assert len(pair.target) == len(pair.symbols)

    def test_only_short_forms(self):
        spec = SyntheticSpec(alphabet_size=10, p_short=1.0, p_drop=0.0)
        for pair in synth_generate(spec, 20, "L3-E"):
            assert all(token.startswith("u") for token in pair.target)

    def test_negative_count(self, small_spec):
        with pytest.raises(DataError):
            synth_generate(small_spec, -1, "L1-E")


class TestOracleCompression:
    def test_keeps_most_salient_suffix(self):
        assert oracle_compression((4, 2, 9, 1), 2) == (9, 1)
        assert oracle_compression((4, 2, 9, 1), 10) == (4, 2, 9, 1)

    def test_budget_must_be_positive(self):
        with pytest.raises(DataError):
            oracle_compression((1, 2), 0)


class TestSyntheticSpec:
    def test_parse_direction(self, small_spec):
        assert parse_direction("L1-E", small_spec) == ("L1", "E")
        assert parse_direction(("E", "L4"), small_spec) == ("E", "L4")
        for bad in ("L1", "L1-E-L2", "L9-E"):
            with pytest.raises(ConfigError):
                parse_direction(bad, small_spec)

    @pytest.mark.parametrize(
        "changes",
        [
            dict(alphabet_size=0),
            dict(alphabet_size=101),
            dict(min_symbols=5, max_symbols=3),
            dict(p_drop=1.5),
            dict(satellites=("E",)),
            dict(satellites=("L1", "L1")),
            dict(satellites=("bad code",)),
        ],
    )
    def test_validation(self, changes):
        with pytest.raises(ConfigError):
            SyntheticSpec(**changes)

    def test_save_load(self, small_spec, tmp_path):
        path = tmp_path / "spec.json"
        small_spec.save(path)
        assert SyntheticSpec.load(path) == small_spec

    def test_load_garbage(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(DataError):
            SyntheticSpec.load(path)
