#!/usr/bin/env python3
"""Compute the subword-token reduction of simplified outputs.

Reads the JSON written by ``python -m lcmt experiment --table simplification``
and reports, per system, how many BPE tokens each complexity setting saves
relative to the unconstrained ``Base`` setting of the same system.

Definition used:
  reduction_pct = (base_tokens - tokens) / base_tokens * 100

Usage:
  python3 tools/compute_relative_reduction.py \
    --input results/simplification_20260101_120000.json

With ``--metric`` any other numeric column (``continuation_tokens``,
``complex_word_ratio``) can be compared the same way.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import pandas as pd


def compute_reduction(baseline: float, value: float) -> float:
    if baseline <= 0:
        raise ValueError(f"baseline must be > 0; got {baseline}")
    return (baseline - value) / baseline * 100.0


def relative_reductions(frame: pd.DataFrame, metric: str = "bpe_tokens", baseline: str = "Base") -> pd.DataFrame:
    """One row per (system, setting) with the reduction against the system's baseline setting."""
    for column in ("system", "setting", metric):
        if column not in frame.columns:
            raise ValueError(f"results have no {column!r} column")
    rows = []
    for system, group in frame.groupby("system", sort=False):
        base = group.loc[group["setting"] == baseline, metric]
        if base.empty:
            raise ValueError(f"system {system!r} has no {baseline!r} row")
        base_value = float(base.iloc[0])
        for _, row in group.iterrows():
            if row["setting"] == baseline:
                continue
            rows.append(
                {
                    "system": system,
                    "setting": row["setting"],
                    "baseline": base_value,
                    "value": float(row[metric]),
                    "reduction_pct": compute_reduction(base_value, float(row[metric])),
                }
            )
    return pd.DataFrame(rows)


def main() -> None:
    parser = argparse.ArgumentParser(description="Compute relative token reduction of simplified outputs.")
    parser.add_argument("--input", required=True, help="Path to a simplification results JSON.")
    parser.add_argument("--metric", default="bpe_tokens", help="Column to compare (default: bpe_tokens).")
    parser.add_argument("--baseline", default="Base", help="Setting used as the reference (default: Base).")
    args = parser.parse_args()

    data = json.loads(Path(args.input).read_text(encoding="utf-8"))
    results = data.get("results", [])
    if not results:
        raise SystemExit("No results found in input")
    try:
        table = relative_reductions(pd.DataFrame(results), args.metric, args.baseline)
    except ValueError as exc:
        raise SystemExit(str(exc)) from None

    print(f"Per-system reductions of {args.metric} (percent):")
    for _, row in table.iterrows():
        print(f"- {row['system']} {row['setting']}: {row['reduction_pct']:.2f}% ({row['baseline']:.0f} -> {row['value']:.0f})")

    print("\nMean reduction per setting:")
    for setting, value in table.groupby("setting", sort=False)["reduction_pct"].mean().items():
        print(f"- {setting}: {value:.2f}%")


if __name__ == "__main__":
    main()
