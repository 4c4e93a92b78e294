"""
Metrics
=======

* ``bleu``: corpus BLEU without smoothing (any zero n-gram precision gives 0).
* ``avg_length_distance``: mean ``|len(hyp) - J|`` in subword tokens.
* ``content_metrics``: exact / recall / precision of synthetic content plus
  the share of outputs written entirely in the expected language.
* ``complexity_report``: subword counts, complex-word ratio and an approximate
  Flesch reading ease.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .bpe import bpe_undo
from .decode import count_continuation
from .errors import DataError
from .synthetic import PIVOT, SyntheticLanguages, SyntheticSpec, oracle_compression

logger = logging.getLogger(__name__)

_VOWEL_GROUPS = re.compile(r"[aeiouy]+")


def _tokens(sentence: str | Sequence[str]) -> list[str]:
    return sentence.split() if isinstance(sentence, str) else list(sentence)


def compute_ci(values: Sequence[float], confidence: float = 0.95) -> tuple[float, float, float]:
    """Mean and Student-t confidence interval."""
    if len(values) == 0:
        return 0.0, 0.0, 0.0
    mean = float(np.mean(values))
    if len(values) == 1:
        return mean, mean, mean
    sem = stats.sem(values)
    if float(sem) == 0.0:
        return mean, mean, mean
    low, high = stats.t.interval(confidence, len(values) - 1, loc=mean, scale=sem)
    return mean, float(low), float(high)


# =============================================================================
# BLEU
# =============================================================================

@dataclass(frozen=True)
class BleuResult:
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_length: int
    ref_length: int


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    hypotheses: Sequence[str | Sequence[str]],
    references: Sequence[str | Sequence[str]],
    max_n: int = 4,
) -> BleuResult:
    if len(hypotheses) != len(references):
        raise DataError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise DataError("BLEU needs at least one sentence")
    if max_n < 1:
        raise DataError(f"max_n must be >= 1, got {max_n}")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_length = ref_length = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = _tokens(hyp), _tokens(ref)
        hyp_length += len(hyp)
        ref_length += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            matches[n - 1] += sum(min(count, ref_counts[gram]) for gram, count in hyp_counts.items())
            totals[n - 1] += max(0, len(hyp) - n + 1)
    precisions = tuple(m / t if t else 0.0 for m, t in zip(matches, totals))
    if hyp_length == 0:
        return BleuResult(0.0, precisions, 0.0, hyp_length, ref_length)
    brevity_penalty = 1.0 if hyp_length > ref_length else math.exp(1.0 - ref_length / hyp_length)
    if min(precisions) == 0.0:
        return BleuResult(0.0, precisions, brevity_penalty, hyp_length, ref_length)
    log_mean = sum(math.log(p) for p in precisions) / max_n
    return BleuResult(100.0 * brevity_penalty * math.exp(log_mean), precisions, brevity_penalty, hyp_length, ref_length)


def bleu(
    hypotheses: Sequence[str | Sequence[str]],
    references: Sequence[str | Sequence[str]],
    max_n: int = 4,
) -> float:
    """Corpus BLEU in [0, 100], unsmoothed."""
    return corpus_bleu(hypotheses, references, max_n).score


# =============================================================================
# Length
# =============================================================================

def length_distances(hypotheses: Sequence[str | Sequence[str] | int], targets: Sequence[int]) -> list[int]:
    if len(hypotheses) != len(targets):
        raise DataError(f"{len(hypotheses)} hypotheses but {len(targets)} target lengths")
    lengths = [h if isinstance(h, (int, np.integer)) else len(_tokens(h)) for h in hypotheses]
    return [abs(int(n) - int(j)) for n, j in zip(lengths, targets)]


def avg_length_distance(hypotheses: Sequence[str | Sequence[str] | int], targets: Sequence[int]) -> float:
    """Mean absolute difference between output length and target ``J``."""
    distances = length_distances(hypotheses, targets)
    return float(np.mean(distances)) if distances else 0.0


# =============================================================================
# Synthetic content
# =============================================================================

@dataclass(frozen=True)
class ContentMetrics:
    exact: float
    recall: float
    precision: float
    language_validity: float
    n_sentences: int
    n_valid: int

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SentenceContent:
    valid: bool
    exact: bool
    recall: float
    precision: float
    hypothesis: tuple[int, ...]
    reference: tuple[int, ...]


def sentence_content(
    hypothesis: Sequence[str],
    source: Sequence[str],
    languages: SyntheticLanguages,
    source_lang: str = PIVOT,
    target_lang: str = PIVOT,
    budget: int | None = None,
) -> SentenceContent:
    decoded = languages.decode(_tokens(hypothesis), target_lang)
    reference = languages.decode(_tokens(source), source_lang).symbols
    if budget is not None:
        reference = oracle_compression(reference, budget)
    overlap = sum((Counter(decoded.symbols) & Counter(reference)).values())
    return SentenceContent(
        valid=decoded.valid,
        exact=decoded.symbols == reference,
        recall=overlap / len(reference) if reference else 0.0,
        precision=overlap / len(decoded.symbols) if decoded.symbols else 0.0,
        hypothesis=decoded.symbols,
        reference=reference,
    )


def content_metrics(
    hypotheses: Sequence[str | Sequence[str]],
    sources: Sequence[str | Sequence[str]],
    spec: SyntheticSpec,
    budgets: Sequence[int] | None = None,
    source_lang: str = PIVOT,
    target_lang: str = PIVOT,
) -> ContentMetrics:
    """Content preservation of ``hypotheses`` against the content of ``sources``.

    With ``budgets`` (one target length per sentence) each hypothesis is
    compared to the best compression of its source that fits the budget.
    Sentences containing foreign tokens count only towards validity.
    """
    per_sentence = content_details(hypotheses, sources, spec, budgets, source_lang, target_lang)
    valid = [s for s in per_sentence if s.valid]
    n = len(per_sentence)
    if not valid:
        return ContentMetrics(0.0, 0.0, 0.0, 0.0, n, 0)
    return ContentMetrics(
        exact=float(np.mean([s.exact for s in valid])),
        recall=float(np.mean([s.recall for s in valid])),
        precision=float(np.mean([s.precision for s in valid])),
        language_validity=len(valid) / n,
        n_sentences=n,
        n_valid=len(valid),
    )


def content_details(
    hypotheses: Sequence[str | Sequence[str]],
    sources: Sequence[str | Sequence[str]],
    spec: SyntheticSpec,
    budgets: Sequence[int] | None = None,
    source_lang: str = PIVOT,
    target_lang: str = PIVOT,
) -> list[SentenceContent]:
    if len(hypotheses) != len(sources):
        raise DataError(f"{len(hypotheses)} hypotheses but {len(sources)} sources")
    if budgets is not None and len(budgets) != len(sources):
        raise DataError(f"{len(budgets)} budgets but {len(sources)} sources")
    if not hypotheses:
        raise DataError("content metrics need at least one sentence")
    languages = SyntheticLanguages(spec)
    return [
        sentence_content(hyp, src, languages, source_lang, target_lang, None if budgets is None else budgets[i])
        for i, (hyp, src) in enumerate(zip(hypotheses, sources))
    ]


def prefix_suffix_recall(
    hypothesis_contents: Sequence[Sequence[int]],
    reference_contents: Sequence[Sequence[int]],
) -> tuple[float, float]:
    """Recall of the first and of the second half of each reference, pooled."""
    if len(hypothesis_contents) != len(reference_contents):
        raise DataError("hypothesis and reference contents are not aligned")
    found = [0, 0]
    total = [0, 0]
    for hyp, ref in zip(hypothesis_contents, reference_contents):
        present = set(hyp)
        half = len(ref) // 2
        for part, symbols in enumerate((ref[:half], ref[half:])):
            total[part] += len(symbols)
            found[part] += sum(1 for s in symbols if s in present)
    return (
        found[0] / total[0] if total[0] else 0.0,
        found[1] / total[1] if total[1] else 0.0,
    )


# =============================================================================
# Complexity
# =============================================================================

@dataclass(frozen=True)
class ComplexityReport:
    bpe_token_count: int
    continuation_count: int
    word_count: int
    sentence_count: int
    complex_word_ratio: float
    fre_approx: float

    def as_dict(self) -> dict:
        return asdict(self)


def syllables(word: str) -> int:
    """Approximate syllable count: maximal vowel groups, at least one."""
    return max(1, len(_VOWEL_GROUPS.findall(word.lower())))


def complexity_report(corpus: Sequence[str | Sequence[str]]) -> ComplexityReport:
    """Subword statistics of a BPE-marked corpus."""
    sentences = [_tokens(s) for s in corpus]
    if not sentences or not any(sentences):
        raise DataError("complexity report needs a non-empty corpus")
    bpe_tokens = sum(len(s) for s in sentences)
    continuation = sum(count_continuation(s) for s in sentences)
    words, complex_words, syllable_count = 0, 0, 0
    for sentence in sentences:
        pieces = 0
        for token in sentence:
            pieces += 1
            if not token.endswith("@@"):
                words += 1
                complex_words += pieces >= 2
                pieces = 0
        for word in bpe_undo(sentence).split():
            syllable_count += syllables(word)
    fre = 206.835 - 1.015 * (words / len(sentences)) - 84.6 * (syllable_count / words) if words else 0.0
    return ComplexityReport(
        bpe_token_count=bpe_tokens,
        continuation_count=continuation,
        word_count=words,
        sentence_count=len(sentences),
        complex_word_ratio=complex_words / words if words else 0.0,
        fre_approx=fre,
    )


def format_report(metrics: dict[str, float]) -> str:
    """``metric<TAB>value`` lines."""
    return "".join(f"{name}\t{value:.6g}\n" if isinstance(value, float) else f"{name}\t{value}\n" for name, value in metrics.items())
