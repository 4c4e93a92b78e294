"""
Desk-scale experiment tables on synthetic corpora
=================================================

Each table trains the systems it needs (or reloads them from ``models_dir``),
decodes a synthetic test set and returns one row per system and setting.

* ``length_distance``: soft length conditioning, mean ``|len - J|`` for the
  four length representations.
* ``quality``: hard length constraint (plus an oracle-length column),
  BLEU and content preservation, with prefix/suffix recall exposing outputs
  that are just truncated translations.
* ``multilingual``: single, bidirectional and multilingual systems on the
  supervised ``L1-E`` direction and the zero-shot ``E-E`` compression.
* ``cascade``: end-to-end compression against translate-then-compress
  pipelines through a pivot language.
* ``simplification``: continuation-token budgets on top of soft length
  conditioning.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Sequence

import pandas as pd

from .checkpoint import load_model
from .data import UNK, Vocabulary, compute_target_length
from .decode import Constraint, Translator, count_continuation
from .errors import ConfigError
from .evaluate import (
    avg_length_distance,
    bleu,
    complexity_report,
    compute_ci,
    content_details,
    content_metrics,
    length_distances,
    prefix_suffix_recall,
)
from .model import LengthMode, ModelConfig, TransformerModel
from .numerics import AdamConfig, Rng
from .synthetic import PIVOT, SyntheticPair, SyntheticSpec, synth_generate
from .train import TrainConfig, Trainer, prepare_corpus

logger = logging.getLogger(__name__)

SYSTEMS: dict[str, tuple[tuple[str, str], ...]] = {
    "single": (("L1", PIVOT),),
    "bidirectional": (("L1", PIVOT), (PIVOT, "L1")),
    "multilingual": (("L1", PIVOT), (PIVOT, "L1"), ("L2", PIVOT), (PIVOT, "L2")),
}
SYSTEM_LABELS = {"single": "L1-E", "bidirectional": "L1+E", "multilingual": "All"}
MODE_LABELS = {
    LengthMode.NONE: "Baseline",
    LengthMode.SOURCE_TOKEN: "Source Emb",
    LengthMode.DECODER_EMBEDDING: "Decoder Emb",
    LengthMode.REVERSE_POSITIONAL: "Decoder Pos",
}
SUPERVISED = ("L1", PIVOT)
ZERO_SHOT = (PIVOT, PIVOT)


@dataclass
class ExperimentConfig:
    spec: SyntheticSpec = field(default_factory=SyntheticSpec)
    n_train: int = 20000
    n_valid: int = 200
    n_test: int = 500
    steps: int = 4000
    save_every: int = 500
    average_k: int = 3
    max_tokens: int = 2048
    n_layers: int = 2
    d_model: int = 64
    d_ff: int = 256
    n_heads: int = 4
    dropout: float = 0.1
    word_dropout: float = 0.1
    max_seq_len: int = 48
    max_len_index: int = 64
    lr: float = 1e-3
    warmup_steps: int = 400
    precision: str = "float32"
    beam: int = 1
    workers: int = 1
    ratios: tuple[float, ...] = (0.8, 0.5)
    simplify_ratio: float = 1.5
    budget_fraction: float = 0.5
    seed: int = 1234
    models_dir: Path | None = None
    progress: bool = True

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ConfigError(f"ratios must be positive, got {self.ratios}")
        if not 0.0 <= self.budget_fraction <= 1.0:
            raise ConfigError(f"budget_fraction must lie in [0, 1], got {self.budget_fraction}")
        if self.models_dir is not None:
            self.models_dir = Path(self.models_dir)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["spec"] = self.spec.to_dict()
        data["models_dir"] = None if self.models_dir is None else str(self.models_dir)
        data["ratios"] = list(self.ratios)
        return data


@dataclass
class System:
    name: str
    mode: LengthMode
    model: TransformerModel
    vocab: Vocabulary
    tagged: bool

    @property
    def label(self) -> str:
        return f"{SYSTEM_LABELS.get(self.name, self.name)} {MODE_LABELS[self.mode]}"


def max_token_reduction(budget_fraction: float) -> float:
    """Largest token-count reduction a continuation budget can give on the synthetic pivot."""
    return (1.0 - budget_fraction) / 2.0

class ExperimentRunner:
    """Trains, caches and evaluates the systems behind every table."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self._systems: dict[tuple[str, LengthMode], System] = {}
        self._tests: dict[tuple[str, str], list[SyntheticPair]] = {}

    # --------------------------------------------------------------- systems

    def system(self, name: str, mode: LengthMode | str) -> System:
        mode = LengthMode(mode)
        key = (name, mode)
        if key not in self._systems:
            self._systems[key] = self._load(name, mode) or self._train(name, mode)
        return self._systems[key]

    def _system_dir(self, name: str, mode: LengthMode) -> Path | None:
        if self.config.models_dir is None:
            return None
        return self.config.models_dir / f"{name}-{mode.value}"

    def _load(self, name: str, mode: LengthMode) -> System | None:
        out = self._system_dir(name, mode)
        if out is None or not (out / "averaged.lcmt").exists() or not (out / "vocab.txt").exists():
            return None
        vocab = Vocabulary.load(out / "vocab.txt")
        model = load_model(out / "averaged.lcmt")
        logger.info("reusing trained system %s-%s from %s", name, mode.value, out)
        return System(name, mode, model, vocab, tagged=bool(vocab.languages))

    def _train(self, name: str, mode: LengthMode) -> System:
        cfg = self.config
        if name not in SYSTEMS:
            raise ConfigError(f"unknown system {name!r}; expected one of {sorted(SYSTEMS)}")
        directions = SYSTEMS[name]
        train = {d: [(p.source, p.target) for p in synth_generate(cfg.spec, cfg.n_train, d, "train")] for d in directions}
        valid = {d: [(p.source, p.target) for p in synth_generate(cfg.spec, cfg.n_valid, d, "valid")] for d in directions}
        vocab, train_examples, tagged = prepare_corpus(train, mode, cfg.max_len_index)
        _, valid_examples, _ = prepare_corpus(valid, mode, cfg.max_len_index, tag=tagged, vocab=vocab)
        model_config = ModelConfig(
            vocab_size=len(vocab),
            n_layers=cfg.n_layers,
            d_model=cfg.d_model,
            d_ff=cfg.d_ff,
            n_heads=cfg.n_heads,
            dropout=cfg.dropout,
            word_dropout=cfg.word_dropout,
            max_seq_len=cfg.max_seq_len,
            max_len_index=cfg.max_len_index,
            length_mode=mode,
            precision=cfg.precision,
            n_reserved=vocab.n_reserved,
        )
        rng = Rng(cfg.seed).child(f"{name}-{mode.value}")
        model = TransformerModel(model_config, rng)
        out = self._system_dir(name, mode)
        logger.info("training %s-%s (%d parameters, %d examples)", name, mode.value, model.num_parameters(), len(train_examples))
        trainer = Trainer(
            model,
            train_examples,
            valid_examples,
            TrainConfig(
                steps=cfg.steps,
                max_tokens=cfg.max_tokens,
                save_every=cfg.save_every,
                average_k=cfg.average_k,
                progress=cfg.progress,
            ),
            AdamConfig(lr=cfg.lr, warmup_steps=cfg.warmup_steps),
            rng,
            out,
        )
        result = trainer.run()
        model.load_state_dict(result.averaged)
        if out is not None:
            vocab.save(out / "vocab.txt")
        return System(name, mode, model, vocab, tagged)

    # ------------------------------------------------------------- decoding

    def test_pairs(self, direction: tuple[str, str]) -> list[SyntheticPair]:
        if direction not in self._tests:
            self._tests[direction] = synth_generate(self.config.spec, self.config.n_test, direction, "test")
        return self._tests[direction]

    def translate(
        self,
        system: System,
        sources: Sequence[Sequence[str]],
        constraints: Sequence[Constraint],
        target_lang: str,
    ) -> list[list[str]]:
        translator = Translator(system.model, system.vocab, beam_size=self.config.beam, workers=self.config.workers)
        results = translator.translate(sources, constraints, target_lang if system.tagged else None)
        cap_hits = sum(r.cap_hit for r in results)
        if cap_hits:
            logger.warning("%s: %d of %d outputs hit max_seq_len", system.label, cap_hits, len(results))
        return [r.tokens for r in results]

    @staticmethod
    def lengths(pairs: Sequence[SyntheticPair], ratio: float | None) -> list[int]:
        """Target lengths from the source length, or the reference length when ``ratio`` is None."""
        if ratio is None:
            return [len(p.target) for p in pairs]
        return [compute_target_length(len(p.source), ratio) for p in pairs]

    def score(
        self,
        hypotheses: Sequence[Sequence[str]],
        pairs: Sequence[SyntheticPair],
        direction: tuple[str, str],
        lengths: Sequence[int] | None,
    ) -> dict:
        src_lang, tgt_lang = direction
        row: dict = {"bleu": bleu(hypotheses, [p.target for p in pairs])}
        if lengths is not None:
            mean, low, high = compute_ci(length_distances(hypotheses, lengths))
            row.update(len_dist=mean, len_dist_ci_low=low, len_dist_ci_high=high)
        if tgt_lang == PIVOT:
            sources = [p.source for p in pairs]
            metrics = content_metrics(hypotheses, sources, self.config.spec, lengths, src_lang, tgt_lang)
            row.update(
                exact=metrics.exact,
                recall=metrics.recall,
                precision=metrics.precision,
                validity=metrics.language_validity,
            )
            details = content_details(hypotheses, sources, self.config.spec, None, src_lang, tgt_lang)
            valid = [d for d in details if d.valid]
            prefix, suffix = prefix_suffix_recall([d.hypothesis for d in valid], [d.reference for d in valid])
            row.update(prefix_recall=prefix, suffix_recall=suffix)
        return row

    # ---------------------------------------------------------------- tables

    def length_distance(self) -> list[dict]:
        pairs = self.test_pairs(SUPERVISED)
        rows = []
        for mode in LengthMode:
            system = self.system("single", mode)
            for ratio in self.config.ratios:
                lengths = self.lengths(pairs, ratio)
                hyps = self.translate(system, [p.source for p in pairs], [Constraint.soft(j) for j in lengths], PIVOT)
                mean, low, high = compute_ci(length_distances(hyps, lengths))
                rows.append(
                    {
                        "system": MODE_LABELS[mode],
                        "ratio": ratio,
                        "len_dist": mean,
                        "ci_low": low,
                        "ci_high": high,
                        "exact_length": sum(len(h) == j for h, j in zip(hyps, lengths)) / len(hyps),
                    }
                )
        return rows

    def quality(self) -> list[dict]:
        pairs = self.test_pairs(SUPERVISED)
        settings = [(MODE_LABELS[LengthMode.NONE], LengthMode.NONE, False), ("Only Search", LengthMode.NONE, True)]
        settings += [(MODE_LABELS[m], m, True) for m in (LengthMode.SOURCE_TOKEN, LengthMode.DECODER_EMBEDDING, LengthMode.REVERSE_POSITIONAL)]
        rows = []
        for label, mode, hard in settings:
            system = self.system("single", mode)
            for ratio in self.config.ratios + (None,):
                lengths = self.lengths(pairs, ratio)
                constraints = [Constraint.hard(j) if hard else Constraint() for j in lengths]
                hyps = self.translate(system, [p.source for p in pairs], constraints, PIVOT)
                rows.append({"system": label, "ratio": "oracle" if ratio is None else ratio, **self.score(hyps, pairs, SUPERVISED, lengths)})
        return rows

    def multilingual(self) -> list[dict]:
        rows = []
        for name in SYSTEMS:
            for mode in (LengthMode.NONE, LengthMode.DECODER_EMBEDDING):
                system = self.system(name, mode)
                for direction in (SUPERVISED, ZERO_SHOT):
                    pairs = self.test_pairs(direction)
                    for ratio in self.config.ratios:
                        lengths = self.lengths(pairs, ratio)
                        hyps = self.translate(system, [p.source for p in pairs], [Constraint.hard(j) for j in lengths], direction[1])
                        rows.append(
                            {
                                "system": SYSTEM_LABELS[name],
                                "model": MODE_LABELS[mode],
                                "test": "-".join(direction),
                                "ratio": ratio,
                                **self.score(hyps, pairs, direction, lengths),
                            }
                        )
        return rows

    def cascade(self) -> list[dict]:
        baseline = self.system("multilingual", LengthMode.NONE)
        end2end = self.system("multilingual", LengthMode.DECODER_EMBEDDING)
        tasks = {SUPERVISED: PIVOT, ZERO_SHOT: "L1"}
        room = end2end.model.config.max_seq_len - end2end.tagged - (end2end.mode is LengthMode.SOURCE_TOKEN)
        rows = []
        for direction, pivot in tasks.items():
            pairs = self.test_pairs(direction)
            sources = [p.source for p in pairs]
            for ratio in self.config.ratios:
                lengths = self.lengths(pairs, ratio)
                hard = [Constraint.hard(j) for j in lengths]
                outputs = {"End2End": self.translate(end2end, sources, hard, PIVOT)}
                for label, first_leg in (("Cascade", [Constraint()] * len(pairs)), ("Cascade Fix. Pivot", hard)):
                    pivots = self.translate(baseline, sources, first_leg, pivot)
                    pivots = [(p or [UNK])[:room] for p in pivots]
                    outputs[label] = self.translate(end2end, pivots, hard, PIVOT)
                for label, hyps in outputs.items():
                    rows.append({"task": "-".join(direction), "system": label, "ratio": ratio, **self.score(hyps, pairs, direction, lengths)})
        return rows

    def simplification(self) -> list[dict]:
        """Continuation budgets on top of soft length conditioning.

        A synthetic long form costs exactly one continuation token, so with
        the content kept the token count can drop by at most
        ``(1 - budget_fraction) / 2`` of the ``Base`` output (25% at B = 50%).
        """
        cfg = self.config
        pairs = self.test_pairs(SUPERVISED)
        sources = [p.source for p in pairs]
        lengths = self.lengths(pairs, cfg.simplify_ratio)
        rows = []
        for name in SYSTEMS:
            system = self.system(name, LengthMode.DECODER_EMBEDDING)
            base = self.translate(system, sources, [Constraint.soft(j) for j in lengths], PIVOT)
            budgets = [math.floor(cfg.budget_fraction * count_continuation(h)) for h in base]
            outputs = {
                "Base": (base, None),
                "Simp.": (
                    self.translate(system, sources, [Constraint.soft(j).with_complexity(b) for j, b in zip(lengths, budgets)], PIVOT),
                    budgets,
                ),
                "Simp. B=0": (
                    self.translate(system, sources, [Constraint.soft(j).with_complexity(0) for j in lengths], PIVOT),
                    [0] * len(pairs),
                ),
            }
            base_tokens = None
            for label, (hyps, limits) in outputs.items():
                report = complexity_report(hyps)
                if base_tokens is None:
                    base_tokens = report.bpe_token_count
                violations = 0 if limits is None else sum(count_continuation(h) > b for h, b in zip(hyps, limits))
                content = content_metrics(hyps, sources, cfg.spec, None, "L1", PIVOT)
                rows.append(
                    {
                        "system": SYSTEM_LABELS[name],
                        "setting": label,
                        "bpe_tokens": report.bpe_token_count,
                        "continuation_tokens": report.continuation_count,
                        "token_reduction": 1.0 - report.bpe_token_count / base_tokens if base_tokens else 0.0,
                        "complex_word_ratio": report.complex_word_ratio,
                        "fre": report.fre_approx,
                        "bleu": bleu(hyps, [p.target for p in pairs]),
                        "recall": content.recall,
                        "len_dist": avg_length_distance(hyps, lengths),
                        "budget_violations": violations,
                    }
                )
        return rows


TABLES: dict[str, Callable[[ExperimentRunner], list[dict]]] = {
    "length_distance": ExperimentRunner.length_distance,
    "quality": ExperimentRunner.quality,
    "multilingual": ExperimentRunner.multilingual,
    "cascade": ExperimentRunner.cascade,
    "simplification": ExperimentRunner.simplification,
}


def run_experiment(table: str, config: ExperimentConfig, runner: ExperimentRunner | None = None) -> pd.DataFrame:
    if table not in TABLES:
        raise ConfigError(f"unknown table {table!r}; expected one of {sorted(TABLES)}")
    runner = runner or ExperimentRunner(config)
    return pd.DataFrame(TABLES[table](runner))


def save_results(table: str, frame: pd.DataFrame, config: ExperimentConfig, output_dir: str | Path = "results") -> tuple[Path, Path]:
    """Write ``<table>.tsv`` and a timestamped JSON with metadata and rows."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    tsv_path = output_dir / f"{table}.tsv"
    frame.to_csv(tsv_path, sep="\t", index=False, float_format="%.4f")
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    full_output = {
        "metadata": {
            "timestamp": datetime.now().isoformat(),
            "table": table,
            "seed": config.seed,
            "config": config.to_dict(),
        },
        "results": json.loads(frame.to_json(orient="records")),
    }
    json_path = output_dir / f"{table}_{timestamp}.json"
    json_path.write_text(json.dumps(full_output, indent=2) + "\n", encoding="utf-8")
    return tsv_path, json_path


def print_summary(table: str, frame: pd.DataFrame, config: ExperimentConfig) -> None:
    """Print human-readable summary."""
    print("\n" + "=" * 60)
    print(f"EXPERIMENT: {table}")
    print("=" * 60)
    print(f"Seed: {config.seed}")
    print(f"Training: {config.n_train} pairs/direction, {config.steps} steps")
    print(f"Test sentences: {config.n_test}")
    print("-" * 60)
    print(frame.to_string(index=False, float_format=lambda x: f"{x:.3f}"))
    if table == "simplification":
        print(
            f"Note: at budget_fraction={config.budget_fraction:g} the token reduction is capped at "
            f"{max_token_reduction(config.budget_fraction):.0%} (one continuation token per long form)"
        )
    print("=" * 60)
