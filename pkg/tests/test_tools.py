"""Tests for the result post-processing scripts under tools/."""

import json

import pandas as pd
import pytest

from compute_relative_reduction import compute_reduction, relative_reductions

ROWS = [
    {"system": "L1-E", "setting": "Base", "bpe_tokens": 200, "continuation_tokens": 40},
    {"system": "L1-E", "setting": "Simp.", "bpe_tokens": 180, "continuation_tokens": 20},
    {"system": "L1-E", "setting": "Simp. B=0", "bpe_tokens": 160, "continuation_tokens": 0},
    {"system": "All", "setting": "Base", "bpe_tokens": 100, "continuation_tokens": 10},
    {"system": "All", "setting": "Simp.", "bpe_tokens": 95, "continuation_tokens": 5},
]


class TestRelativeReduction:
    def test_compute_reduction(self):
        assert compute_reduction(200, 150) == pytest.approx(25.0)
        assert compute_reduction(10, 12) == pytest.approx(-20.0)

    def test_non_positive_baseline(self):
        with pytest.raises(ValueError):
            compute_reduction(0, 5)

    def test_per_system_rows(self):
        table = relative_reductions(pd.DataFrame(ROWS))
        assert list(zip(table["system"], table["setting"])) == [
            ("L1-E", "Simp."),
            ("L1-E", "Simp. B=0"),
            ("All", "Simp."),
        ]
        assert table["reduction_pct"].tolist() == pytest.approx([10.0, 20.0, 5.0])

    def test_other_metric(self):
        table = relative_reductions(pd.DataFrame(ROWS), metric="continuation_tokens")
        assert table["reduction_pct"].tolist() == pytest.approx([50.0, 100.0, 50.0])

    def test_missing_baseline_row(self):
        with pytest.raises(ValueError, match="Base"):
            relative_reductions(pd.DataFrame(ROWS[1:3]))

    def test_missing_column(self):
        with pytest.raises(ValueError):
            relative_reductions(pd.DataFrame(ROWS), metric="fre")


class TestPlot:
    @pytest.fixture
    def plot(self):
        pytest.importorskip("matplotlib")
        import plot_experiment

        return plot_experiment

    def test_load_results(self, plot, tmp_path):
        path = tmp_path / "length_distance_1.json"
        path.write_text(json.dumps({"metadata": {"table": "length_distance"}, "results": ROWS}))
        table, frame = plot.load_results(path)
        assert table == "length_distance"
        assert len(frame) == len(ROWS)

    def test_empty_results(self, plot, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text(json.dumps({"results": []}))
        with pytest.raises(SystemExit):
            plot.load_results(path)

    def test_grouped_bar_chart(self, plot, tmp_path):
        output = plot.create_grouped_bar_chart(
            pd.DataFrame(ROWS), "bpe_tokens", "setting", "system", "simplification", tmp_path / "out" / "chart.png"
        )
        assert output.exists() and output.stat().st_size > 0

    def test_unknown_column(self, plot, tmp_path):
        with pytest.raises(SystemExit):
            plot.create_grouped_bar_chart(pd.DataFrame(ROWS), "bleu", "setting", "system", "t", tmp_path / "x.png")
