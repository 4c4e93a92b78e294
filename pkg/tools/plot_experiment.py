#!/usr/bin/env python3
"""
Plot an experiment table as a grouped bar chart

    python3 tools/plot_experiment.py --input results/length_distance_20260101_120000.json

One group per length ratio (or per setting), one bar per system. The metric
defaults to the table's headline column.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

plt.style.use('seaborn-v0_8-darkgrid')
plt.rcParams['figure.facecolor'] = 'white'
plt.rcParams['axes.facecolor'] = 'white'
plt.rcParams['font.size'] = 12
plt.rcParams['font.family'] = 'sans-serif'
plt.rcParams['axes.labelsize'] = 13
plt.rcParams['axes.titlesize'] = 15

FIGURE_SIZE = (12, 6.27)

# ColorBrewer Set2, colorblind-friendly
COLORS = ['#66C2A5', '#FC8D62', '#8DA0CB', '#E78AC3', '#A6D854', '#FFD92F', '#E5C494', '#B3B3B3']
PATTERNS = ['', '///', '...', 'xxx', '+++', '\\\\\\', 'ooo', '---']

HEADLINE = {
    "length_distance": ("len_dist", "ratio", "system"),
    "quality": ("recall", "ratio", "system"),
    "multilingual": ("recall", "test", "system"),
    "cascade": ("recall", "task", "system"),
    "simplification": ("bpe_tokens", "setting", "system"),
}


def load_results(path: str | Path) -> tuple[str, pd.DataFrame]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    results = data.get("results", [])
    if not results:
        raise SystemExit(f"No results found in {path}")
    return data.get("metadata", {}).get("table", "experiment"), pd.DataFrame(results)


def create_grouped_bar_chart(frame: pd.DataFrame, metric: str, group: str, series: str, title: str, output: str | Path) -> Path:
    """Save a bar chart of ``metric`` with one cluster per ``group`` value and one bar per ``series`` value."""
    for column in (metric, group, series):
        if column not in frame.columns:
            raise SystemExit(f"results have no {column!r} column")
    pivot = frame.pivot_table(index=group, columns=series, values=metric, aggfunc="mean", sort=False)
    groups = [str(g) for g in pivot.index]
    x = np.arange(len(groups))
    width = 0.8 / max(1, len(pivot.columns))

    fig, ax = plt.subplots(figsize=FIGURE_SIZE, dpi=100)
    for i, name in enumerate(pivot.columns):
        values = pivot[name].to_numpy(dtype=float)
        bars = ax.bar(
            x + (i - (len(pivot.columns) - 1) / 2) * width,
            values,
            width,
            label=str(name),
            color=COLORS[i % len(COLORS)],
            hatch=PATTERNS[i % len(PATTERNS)],
            alpha=0.85,
            edgecolor='black',
            linewidth=1.0,
        )
        for bar, value in zip(bars, values):
            if np.isfinite(value):
                ax.text(bar.get_x() + bar.get_width() / 2., bar.get_height(), f'{value:.2f}',
                        ha='center', va='bottom', fontsize=9)

    ax.set_xticks(x)
    ax.set_xticklabels(groups)
    ax.set_xlabel(group)
    ax.set_ylabel(metric)
    ax.set_title(title, fontweight='bold', pad=15)
    ax.set_ylim(bottom=0)
    ax.grid(axis='y', alpha=0.3, linestyle='--')
    ax.legend(loc='upper right', fontsize=10)
    plt.tight_layout()

    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    plt.savefig(output, dpi=100, bbox_inches='tight', facecolor='white')
    plt.close(fig)
    print(f"✓ Created: {output}")
    return output


def main() -> None:
    parser = argparse.ArgumentParser(description="Plot an experiment results JSON.")
    parser.add_argument("--input", required=True, help="Results JSON written by 'python -m lcmt experiment'.")
    parser.add_argument("--metric", help="Column to plot (default: the table's headline metric).")
    parser.add_argument("--output", help="PNG path (default: next to the input).")
    args = parser.parse_args()

    table, frame = load_results(args.input)
    metric, group, series = HEADLINE.get(table, ("bleu", "ratio", "system"))
    metric = args.metric or metric
    if table == "multilingual" and "model" in frame.columns:
        frame = frame.assign(system=frame["system"] + " " + frame["model"])
    output = args.output or Path(args.input).with_suffix(f".{metric}.png")
    create_grouped_bar_chart(frame, metric, group, series, f"{table}: {metric}", output)


if __name__ == "__main__":
    main()
