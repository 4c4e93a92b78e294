"""
Command-line interface
======================

    python -m lcmt gen-data    --out data/synthetic
    python -m lcmt bpe         --learn --merges 1000 --input corpus.txt --codes codes.txt
    python -m lcmt train       --data data/synthetic --langs L1-E --mode decoder_embedding --out models/dec
    python -m lcmt translate   --model-dir models/dec --input test.L1-E.src --constraint hard:0.8
    python -m lcmt evaluate    --hyps out.txt --refs test.L1-E.tgt --sources test.L1-E.src --spec data/synthetic/spec.json
    python -m lcmt experiment  --table length_distance

Every command also accepts ``--config FILE`` (``key = value`` lines); flags
given on the command line override the file.

Exit codes: 0 success, 2 usage or configuration error, 3 data / checkpoint
error or missing file, 4 constraint conflict.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .bpe import BpeMerges, bpe_apply, bpe_learn
from .checkpoint import load_model
from .config import EXIT_OK, RunConfig, exit_code_for, read_config_file, resolve_config
from .data import Vocabulary, compute_target_length, read_parallel, read_sentences, write_parallel, write_sentences
from .decode import ConstraintRequest, LengthKind, Translator, count_continuation
from .errors import ConfigError, DataError, LcmtError
from .evaluate import (
    avg_length_distance,
    bleu,
    complexity_report,
    compute_ci,
    content_metrics,
    format_report,
    length_distances,
)
from .experiments import TABLES, ExperimentConfig, print_summary, run_experiment, save_results
from .model import LengthMode, ModelConfig, TransformerModel
from .numerics import AdamConfig, Rng, precision
from .synthetic import PIVOT, SyntheticSpec, parse_direction, synth_generate
from .train import TrainConfig, Trainer, prepare_corpus

logger = logging.getLogger(__name__)

GLOBAL_DEFAULTS: dict[str, Any] = {
    "seed": 1234,
    "precision": "float32",
    "log_level": "INFO",
}

SPEC_DEFAULTS: dict[str, Any] = {
    "alphabet_size": 40,
    "min_symbols": 3,
    "max_symbols": 8,
    "p_short": 0.5,
    "p_drop": 0.1,
}

MODEL_DEFAULTS: dict[str, Any] = {
    "layers": 2,
    "d_model": 64,
    "d_ff": 256,
    "heads": 4,
    "dropout": 0.1,
    "word_dropout": 0.1,
    "max_seq_len": 48,
    "max_len_index": 64,
    "lr": 1e-3,
    "warmup": 400,
    "max_tokens": 2048,
    "steps": 4000,
    "save_every": 500,
    "average_k": 3,
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "gen-data": {
        "out": "data/synthetic",
        "directions": "L1-E,E-L1,L2-E,E-L2",
        "test_directions": "L1-E,E-E",
        "n_train": 20000,
        "n_valid": 200,
        "n_test": 500,
        **SPEC_DEFAULTS,
    },
    "bpe": {
        "learn": False,
        "apply": False,
        "merges": 1000,
        "input": "",
        "codes": "codes.txt",
        "output": "",
    },
    "train": {
        "data": "data/synthetic",
        "langs": "L1-E",
        "mode": "none",
        "out": "models/run",
        "tag": "auto",
        "resume": False,
        **MODEL_DEFAULTS,
    },
    "translate": {
        "model_dir": "models/run",
        "checkpoint": "averaged.lcmt",
        "input": "",
        "output": "",
        "constraint": "none",
        "ratio": None,
        "refs": None,
        "complexity_budget": None,
        "complexity_penalty": 0.0,
        "beam": 1,
        "target_lang": None,
        "workers": 1,
    },
    "evaluate": {
        "hyps": "",
        "refs": None,
        "sources": None,
        "spec": None,
        "metrics": "bleu,length,content,complexity",
        "ratio": None,
        "source_lang": "L1",
        "target_lang": PIVOT,
        "budget_aware": False,
        "out": None,
    },
    "experiment": {
        "table": "length_distance",
        "out": "results",
        "models_dir": None,
        "n_train": 20000,
        "n_valid": 200,
        "n_test": 500,
        "beam": 1,
        "workers": 1,
        "ratios": "0.8,0.5",
        "simplify_ratio": 1.5,
        "budget_fraction": 0.5,
        **MODEL_DEFAULTS,
        **SPEC_DEFAULTS,
    },
}


# =============================================================================
# Parser
# =============================================================================

def _add_spec_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alphabet-size", type=int, help="number of content symbols (default: 40)")
    parser.add_argument("--min-symbols", type=int, help="shortest sentence in symbols (default: 3)")
    parser.add_argument("--max-symbols", type=int, help="longest sentence in symbols (default: 8)")
    parser.add_argument("--p-short", type=float, help="probability of the short pivot form (default: 0.5)")
    parser.add_argument("--p-drop", type=float, help="per-symbol drop probability on pivot targets (default: 0.1)")


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--layers", type=int, help="encoder and decoder layers (default: 2)")
    parser.add_argument("--d-model", type=int, help="model width (default: 64)")
    parser.add_argument("--d-ff", type=int, help="feed-forward width (default: 256)")
    parser.add_argument("--heads", type=int, help="attention heads (default: 4)")
    parser.add_argument("--dropout", type=float, help="dropout probability (default: 0.1)")
    parser.add_argument("--word-dropout", type=float, help="input word dropout probability (default: 0.1)")
    parser.add_argument("--max-seq-len", type=int, help="longest sequence in tokens (default: 48)")
    parser.add_argument("--max-len-index", type=int, help="largest representable length L_max (default: 64)")
    parser.add_argument("--lr", type=float, help="peak learning rate (default: 1e-3)")
    parser.add_argument("--warmup", type=int, help="warmup steps (default: 400)")
    parser.add_argument("--max-tokens", type=int, help="padded tokens per batch (default: 2048)")
    parser.add_argument("--steps", type=int, help="optimizer steps (default: 4000)")
    parser.add_argument("--save-every", type=int, help="validate and checkpoint every N steps (default: 500)")
    parser.add_argument("--average-k", type=int, help="average the best K checkpoints (default: 3)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="root random seed (default: 1234)")
    common.add_argument("--precision", choices=["float32", "float64"], help="floating point precision (default: float32)")
    common.add_argument("--config", help="file of 'key = value' settings; flags override it")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging level (default: INFO)")

    parser = argparse.ArgumentParser(
        prog="lcmt",
        description="Length- and complexity-constrained transformer translation on synthetic corpora",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        return commands.add_parser(name, help=help_text, parents=[common], argument_default=argparse.SUPPRESS)

    p = command("gen-data", "generate synthetic parallel corpora")
    p.add_argument("--out", help="output directory (default: data/synthetic)")
    p.add_argument("--directions", help="training directions, comma separated (default: L1-E,E-L1,L2-E,E-L2)")
    p.add_argument("--test-directions", help="extra test-only directions (default: L1-E,E-E)")
    p.add_argument("--n-train", type=int, help="training pairs per direction (default: 20000)")
    p.add_argument("--n-valid", type=int, help="validation pairs per direction (default: 200)")
    p.add_argument("--n-test", type=int, help="test pairs per direction (default: 500)")
    _add_spec_flags(p)

    p = command("bpe", "learn or apply byte-pair encoding")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--learn", action="store_true", help="learn merges from --input into --codes")
    mode.add_argument("--apply", action="store_true", help="segment --input with --codes into --output")
    p.add_argument("--merges", type=int, help="number of merges to learn (default: 1000)")
    p.add_argument("--input", help="whitespace-tokenized text, comma separated files for --learn")
    p.add_argument("--codes", help="merges file (default: codes.txt)")
    p.add_argument("--output", help="segmented output file (default: stdout)")

    p = command("train", "train a model")
    p.add_argument("--data", help="directory written by gen-data (default: data/synthetic)")
    p.add_argument("--langs", help="training directions, comma separated, e.g. L1-E,E-L1 (default: L1-E)")
    p.add_argument("--mode", choices=[m.value for m in LengthMode], help="length representation (default: none)")
    p.add_argument("--out", help="output directory (default: models/run)")
    p.add_argument("--tag", choices=["auto", "always", "never"], help="target-language tags (default: auto)")
    p.add_argument("--resume", action="store_true", help="continue from the state saved in --out")
    _add_model_flags(p)

    p = command("translate", "translate with optional length and complexity constraints")
    p.add_argument("--model-dir", help="directory with a checkpoint and vocab.txt (default: models/run)")
    p.add_argument("--checkpoint", help="checkpoint file name inside --model-dir (default: averaged.lcmt)")
    p.add_argument("--input", help="source sentences, one per line")
    p.add_argument("--output", help="hypotheses file (default: stdout)")
    p.add_argument("--constraint", help="none | soft:R | hard:R | oracle (default: none)")
    p.add_argument("--ratio", type=float, help="length ratio for soft/hard without an explicit value")
    p.add_argument("--refs", help="reference file, required for oracle lengths")
    p.add_argument("--complexity-budget", type=int, help="maximum number of continuation tokens")
    p.add_argument("--complexity-penalty", type=float, help="soft penalty gamma per continuation token (default: 0)")
    p.add_argument("--beam", type=int, help="beam size, 1 for greedy (default: 1)")
    p.add_argument("--target-lang", help="target language tag for multilingual models")
    p.add_argument("--workers", type=int, help="decoding threads (default: 1)")

    p = command("evaluate", "score hypotheses")
    p.add_argument("--hyps", help="hypotheses file")
    p.add_argument("--refs", help="references file")
    p.add_argument("--sources", help="sources file (length targets and content reference)")
    p.add_argument("--spec", help="spec.json written by gen-data (content metrics)")
    p.add_argument("--metrics", help="comma separated: bleu,length,content,complexity")
    p.add_argument("--ratio", type=float, help="length ratio for J; reference lengths when omitted")
    p.add_argument("--source-lang", help="language of --sources (default: L1)")
    p.add_argument("--target-lang", help="language of --hyps (default: E)")
    p.add_argument("--budget-aware", action="store_true", help="compare content with the best compression fitting J")
    p.add_argument("--out", help="write the summary as JSON")

    p = command("experiment", "reproduce one results table at desk scale")
    p.add_argument("--table", choices=sorted(TABLES), help="table to run (default: length_distance)")
    p.add_argument("--out", help="results directory (default: results)")
    p.add_argument("--models-dir", help="save trained systems here and reuse them on later runs")
    p.add_argument("--n-train", type=int, help="training pairs per direction (default: 20000)")
    p.add_argument("--n-valid", type=int, help="validation pairs per direction (default: 200)")
    p.add_argument("--n-test", type=int, help="test sentences (default: 500)")
    p.add_argument("--beam", type=int, help="beam size (default: 1)")
    p.add_argument("--workers", type=int, help="decoding threads (default: 1)")
    p.add_argument("--ratios", help="length ratios, comma separated (default: 0.8,0.5)")
    p.add_argument("--simplify-ratio", type=float, help="soft length ratio for the simplification table (default: 1.5)")
    p.add_argument("--budget-fraction", type=float, help="continuation budget as a share of the baseline count (default: 0.5)")
    _add_model_flags(p)
    _add_spec_flags(p)
    return parser


def resolve(args: argparse.Namespace) -> RunConfig:
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    defaults = {**GLOBAL_DEFAULTS, **DEFAULTS[args.command]}
    file_values = read_config_file(args.config) if getattr(args, "config", None) else None
    return resolve_config(args.command, defaults, file_values, flags)


# =============================================================================
# Helpers
# =============================================================================

def _csv(text: str) -> list[str]:
    return [item.strip() for item in str(text).split(",") if item.strip()]


def _optional_int(value) -> int | None:
    if value is None or value == "":
        return None
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected an integer, got {value!r}") from None


def _optional_float(value) -> float | None:
    if value is None or value == "":
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {value!r}") from None


def _spec(rc: RunConfig) -> SyntheticSpec:
    return SyntheticSpec(
        alphabet_size=rc.alphabet_size,
        min_symbols=rc.min_symbols,
        max_symbols=rc.max_symbols,
        p_short=rc.p_short,
        p_drop=rc.p_drop,
        seed=rc.seed,
    )


def _write_or_print(path: str | None, sentences: Sequence[Sequence[str]]) -> None:
    if path:
        write_sentences(path, sentences)
        print(f"Wrote {len(sentences)} lines to: {path}")
    else:
        sys.stdout.write("".join(" ".join(s) + "\n" for s in sentences))


def _require(rc: RunConfig, *keys: str) -> None:
    missing = [k for k in keys if not rc.get(k)]
    if missing:
        raise ConfigError(f"{rc.command}: missing required setting(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")


# =============================================================================
# Commands
# =============================================================================

def cmd_gen_data(rc: RunConfig) -> int:
    spec = _spec(rc)
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    spec.save(out / "spec.json")
    splits = [("train", rc.n_train), ("valid", rc.n_valid), ("test", rc.n_test)]
    for direction in _csv(rc.directions):
        src, tgt = parse_direction(direction, spec)
        for split, n in splits:
            pairs = synth_generate(spec, n, (src, tgt), split)
            write_parallel(out / f"{split}.{src}-{tgt}", [(p.source, p.target) for p in pairs])
    for direction in _csv(rc.test_directions):
        src, tgt = parse_direction(direction, spec)
        pairs = synth_generate(spec, rc.n_test, (src, tgt), "test")
        write_parallel(out / f"test.{src}-{tgt}", [(p.source, p.target) for p in pairs])
    print(f"Synthetic corpora written to: {out}")
    return EXIT_OK


def cmd_bpe(rc: RunConfig) -> int:
    if rc.learn == rc.apply:
        raise ConfigError("bpe: choose exactly one of --learn or --apply")
    _require(rc, "input", "codes")
    if rc.learn:
        corpus = [tokens for path in _csv(rc.input) for tokens in read_sentences(path)]
        merges = bpe_learn(corpus, rc.merges)
        merges.save(rc.codes)
        print(f"Learned {len(merges)} merges into: {rc.codes}")
        return EXIT_OK
    merges = BpeMerges.load(rc.codes)
    _write_or_print(rc.output, [bpe_apply(tokens, merges) for tokens in read_sentences(rc.input)])
    return EXIT_OK


def cmd_train(rc: RunConfig) -> int:
    data = Path(rc.data)
    out = Path(rc.out)
    directions = [tuple(d.split("-")) for d in _csv(rc.langs)]
    if not directions or any(len(d) != 2 for d in directions):
        raise ConfigError(f"invalid --langs {rc.langs!r}; use SRC-TGT pairs such as L1-E,E-L1")
    train = {d: read_parallel(data / f"train.{d[0]}-{d[1]}") for d in directions}
    valid = {d: read_parallel(data / f"valid.{d[0]}-{d[1]}") for d in directions}
    tag = {"auto": None, "always": True, "never": False}[rc.tag]
    if rc.resume:
        vocab = Vocabulary.load(out / "vocab.txt")
        tag = bool(vocab.languages)
    else:
        vocab = None
    vocab, train_examples, tagged = prepare_corpus(train, rc.mode, rc.max_len_index, tag=tag, vocab=vocab)
    _, valid_examples, _ = prepare_corpus(valid, rc.mode, rc.max_len_index, tag=tagged, vocab=vocab)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")

    config = ModelConfig(
        vocab_size=len(vocab),
        n_layers=rc.layers,
        d_model=rc.d_model,
        d_ff=rc.d_ff,
        n_heads=rc.heads,
        dropout=rc.dropout,
        word_dropout=rc.word_dropout,
        max_seq_len=rc.max_seq_len,
        max_len_index=rc.max_len_index,
        length_mode=rc.mode,
        precision=rc.precision,
        n_reserved=vocab.n_reserved,
    )
    rng = Rng(rc.seed)
    model = TransformerModel(config, rng)
    logger.info("model: %s, %d parameters", config.length_mode.value, model.num_parameters())
    trainer = Trainer(
        model,
        train_examples,
        valid_examples,
        TrainConfig(steps=rc.steps, max_tokens=rc.max_tokens, save_every=rc.save_every, average_k=rc.average_k),
        AdamConfig(lr=rc.lr, warmup_steps=rc.warmup),
        rng,
        out,
    )
    result = trainer.run(resume=rc.resume)

    print("\n" + "=" * 60)
    print("TRAINING SUMMARY")
    print("=" * 60)
    print(f"Mode: {config.length_mode.value}")
    print(f"Directions: {', '.join('-'.join(d) for d in directions)}")
    print(f"Steps: {rc.steps}")
    for row in result.valid_log[-5:]:
        print(f"  step {row['step']:>6}: valid loss {row['valid_loss']:.4f}")
    print(f"Averaged checkpoints (steps): {[step for _, step in result.best]}")
    print(f"Saved to: {out / 'averaged.lcmt'}")
    print("=" * 60)
    return EXIT_OK


def cmd_translate(rc: RunConfig) -> int:
    _require(rc, "input")
    model_dir = Path(rc.model_dir)
    model = load_model(model_dir / rc.checkpoint, precision=rc.precision)
    vocab = Vocabulary.load(model_dir / "vocab.txt")
    sources = read_sentences(rc.input)
    request = ConstraintRequest.parse(rc.constraint, _optional_float(rc.ratio))
    references: list[list[str]] | None = None
    if request.needs_reference:
        if not rc.refs:
            raise ConfigError("oracle lengths need --refs")
        references = read_sentences(rc.refs)
        if len(references) != len(sources):
            raise DataError(f"{len(sources)} sources but {len(references)} references")
    budget = _optional_int(rc.complexity_budget)
    penalty = float(rc.complexity_penalty)
    constraints = []
    for i, tokens in enumerate(sources):
        constraint = request.resolve(len(tokens), None if references is None else len(references[i]))
        if budget is not None or penalty > 0:
            constraint = constraint.with_complexity(budget, penalty)
        constraints.append(constraint)

    if model.config.length_mode.needs_target_length and request.length is LengthKind.NONE:
        logger.info("model uses %s; pass --constraint soft:R or hard:R", model.config.length_mode.value)
    translator = Translator(model, vocab, beam_size=rc.beam, workers=rc.workers)
    results = translator.translate(sources, constraints, rc.target_lang)
    hypotheses = [r.tokens for r in results]

    if request.length is LengthKind.HARD:
        violations = sum(len(h) != c.target_length for h, c in zip(hypotheses, constraints))
        logger.info("hard length check: %d of %d outputs differ from J", violations, len(hypotheses))
    if budget is not None:
        over = sum(count_continuation(h) > budget for h in hypotheses)
        logger.info("complexity check: %d of %d outputs exceed B=%d", over, len(hypotheses), budget)
    cap_hits = sum(r.cap_hit for r in results)
    if cap_hits:
        logger.warning("%d outputs reached max_seq_len without EOS", cap_hits)
    _write_or_print(rc.output, hypotheses)
    return EXIT_OK


def cmd_evaluate(rc: RunConfig) -> int:
    _require(rc, "hyps")
    hyps = read_sentences(rc.hyps)
    refs = read_sentences(rc.refs) if rc.refs else None
    sources = read_sentences(rc.sources) if rc.sources else None
    for name, other in (("references", refs), ("sources", sources)):
        if other is not None and len(other) != len(hyps):
            raise DataError(f"{len(hyps)} hypotheses but {len(other)} {name}")
    ratio = _optional_float(rc.ratio)
    lengths = None
    if ratio is not None and sources is not None:
        lengths = [compute_target_length(len(s), ratio) for s in sources]
    elif refs is not None:
        lengths = [len(r) for r in refs]

    summary: dict[str, float] = {}
    for metric in _csv(rc.metrics):
        if metric == "bleu":
            if refs is None:
                raise ConfigError("bleu needs --refs")
            summary["bleu"] = bleu(hyps, refs)
        elif metric == "length":
            if lengths is None:
                raise ConfigError("length needs --refs, or --sources with --ratio")
            _, low, high = compute_ci(length_distances(hyps, lengths))
            summary["avg_length_distance"] = avg_length_distance(hyps, lengths)
            summary["avg_length_distance_ci_low"] = low
            summary["avg_length_distance_ci_high"] = high
        elif metric == "content":
            if sources is None or not rc.spec:
                raise ConfigError("content needs --sources and --spec")
            budgets = lengths if rc.budget_aware else None
            metrics = content_metrics(hyps, sources, SyntheticSpec.load(rc.spec), budgets, rc.source_lang, rc.target_lang)
            summary.update({f"content_{k}": v for k, v in metrics.as_dict().items()})
        elif metric == "complexity":
            summary.update({f"complexity_{k}": v for k, v in complexity_report(hyps).as_dict().items()})
        else:
            raise ConfigError(f"unknown metric {metric!r}; expected bleu, length, content or complexity")

    sys.stdout.write(format_report(summary))
    if rc.out:
        Path(rc.out).parent.mkdir(parents=True, exist_ok=True)
        Path(rc.out).write_text(json.dumps({"config": json.loads(rc.to_json()), "metrics": summary}, indent=2) + "\n", encoding="utf-8")
        print(f"Summary saved to: {rc.out}")
    return EXIT_OK


def cmd_experiment(rc: RunConfig) -> int:
    config = ExperimentConfig(
        spec=_spec(rc),
        n_train=rc.n_train,
        n_valid=rc.n_valid,
        n_test=rc.n_test,
        steps=rc.steps,
        save_every=rc.save_every,
        average_k=rc.average_k,
        max_tokens=rc.max_tokens,
        n_layers=rc.layers,
        d_model=rc.d_model,
        d_ff=rc.d_ff,
        n_heads=rc.heads,
        dropout=rc.dropout,
        word_dropout=rc.word_dropout,
        max_seq_len=rc.max_seq_len,
        max_len_index=rc.max_len_index,
        lr=rc.lr,
        warmup_steps=rc.warmup,
        precision=rc.precision,
        beam=rc.beam,
        workers=rc.workers,
        ratios=tuple(float(r) for r in _csv(rc.ratios)),
        simplify_ratio=rc.simplify_ratio,
        budget_fraction=rc.budget_fraction,
        seed=rc.seed,
        models_dir=rc.models_dir,
    )
    frame = run_experiment(rc.table, config)
    tsv_path, json_path = save_results(rc.table, frame, config, rc.out)
    print_summary(rc.table, frame, config)
    print(f"\nResults saved to: {json_path}")
    print(f"Table: {tsv_path}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "bpe": cmd_bpe,
    "train": cmd_train,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = resolve(args)
        logging.basicConfig(
            level=getattr(logging, str(rc.log_level).upper(), logging.INFO),
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        logger.info("resolved config: %s", rc.to_json())
        if rc.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {rc.precision!r}")
        with precision(rc.precision):
            return COMMANDS[args.command](rc)
    except (LcmtError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
