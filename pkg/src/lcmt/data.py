"""
Corpus pipeline: vocabulary, examples, length annotation, tagging, batching
==========================================================================

Sentences are whitespace-tokenized (after BPE when applicable). A parallel
corpus is a pair of aligned files ``<prefix>.src`` / ``<prefix>.tgt``.

The target length ``J`` of an example is the number of target subword tokens,
BOS/EOS excluded. Source-side control tokens are placed language tag first,
length token second: ``<2E> <len_5> s1 s2 ...``.
"""

from __future__ import annotations

import dataclasses
import logging
import re
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import DataError

if TYPE_CHECKING:
    from .numerics import Rng

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
SPECIAL_TOKENS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3
CONTINUATION_MARKER = "@@"

_TAG_PATTERN = re.compile(r"^<2[^\s<>]+>$")
_LENGTH_PATTERN = re.compile(r"^<len_(\d+)>$")


def language_tag(lang: str) -> str:
    return f"<2{lang}>"


def length_token(target_length: int) -> str:
    return f"<len_{target_length}>"


def is_control_token(form: str) -> bool:
    return form in SPECIAL_TOKENS or bool(_TAG_PATTERN.match(form) or _LENGTH_PATTERN.match(form))


# =============================================================================
# Vocabulary
# =============================================================================

class Vocabulary:
    """Bijective surface form <-> id map.

    Ids are laid out as: the four specials, language tags, length tokens
    ``<len_1> .. <len_L>`` (only when built for source_token mode), then corpus
    tokens by descending frequency, ties broken by form.
    """

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise DataError(f"vocabulary must start with {SPECIAL_TOKENS}")
        index: dict[str, int] = {}
        for i, form in enumerate(tokens):
            if not form or any(ch.isspace() for ch in form):
                raise DataError(f"vocabulary entry {i} is empty or contains whitespace: {form!r}")
            if form in index:
                raise DataError(f"duplicate vocabulary entry {form!r} at ids {index[form]} and {i}")
            index[form] = i
        self.tokens = tokens
        self._index = index
        n_reserved = len(SPECIAL_TOKENS)
        while n_reserved < len(tokens) and is_control_token(tokens[n_reserved]):
            n_reserved += 1
        self.n_reserved = n_reserved

    @classmethod
    def build(
        cls,
        sentences: Iterable[Sequence[str]],
        languages: Sequence[str] = (),
        max_len_index: int | None = None,
        min_count: int = 1,
    ) -> "Vocabulary":
        counts: Counter[str] = Counter()
        for sentence in sentences:
            counts.update(sentence)
        tokens = list(SPECIAL_TOKENS)
        tokens += [language_tag(lang) for lang in languages]
        if max_len_index is not None:
            tokens += [length_token(n) for n in range(1, max_len_index + 1)]
        reserved = set(tokens)
        corpus = [(form, n) for form, n in counts.items() if n >= min_count and form not in reserved]
        for form, _ in corpus:
            if is_control_token(form):
                raise DataError(f"corpus token {form!r} collides with the control-token syntax")
        corpus.sort(key=lambda item: (-item[1], item[0]))
        vocab = cls(tokens + [form for form, _ in corpus])
        logger.info(
            "built vocabulary: %d entries (%d reserved, %d corpus)", len(vocab), vocab.n_reserved, len(corpus)
        )
        return vocab

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, form: str) -> bool:
        return form in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id_of(self, form: str) -> int:
        return self._index.get(form, UNK_ID)

    def form_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self._index.get(form, UNK_ID) for form in tokens]

    def decode(self, ids: Iterable[int], strip_specials: bool = True) -> list[str]:
        forms = []
        for token_id in ids:
            token_id = int(token_id)
            if strip_specials and token_id in (PAD_ID, BOS_ID, EOS_ID):
                continue
            forms.append(self.tokens[token_id])
        return forms

    @property
    def languages(self) -> list[str]:
        return [form[2:-1] for form in self.tokens[: self.n_reserved] if _TAG_PATTERN.match(form)]

    @property
    def max_length_token(self) -> int:
        values = [int(m.group(1)) for form in self.tokens[: self.n_reserved] if (m := _LENGTH_PATTERN.match(form))]
        return max(values, default=0)

    def banned_ids(self) -> np.ndarray:
        """Ids that may never be generated: PAD, UNK, BOS, language tags and length tokens."""
        return np.array([i for i in range(self.n_reserved) if i != EOS_ID], dtype=np.int64)

    def continuation_mask(self) -> np.ndarray:
        return np.array([form.endswith(CONTINUATION_MARKER) for form in self.tokens], dtype=bool)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{form}\n" for form in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


# =============================================================================
# Examples
# =============================================================================

@dataclass(frozen=True)
class Example:
    """One training / decoding unit.

    ``n_control`` counts the leading control tokens (language tag, length
    token) of ``src_ids``; the true source length is what follows them.
    """

    src_ids: tuple[int, ...]
    tgt_ids: tuple[int, ...]
    target_length: int | None = None
    lang_tag: str | None = None
    n_control: int = 0

    @property
    def source_length(self) -> int:
        return len(self.src_ids) - self.n_control


def make_example(src_tokens: Sequence[str], tgt_tokens: Sequence[str], vocab: Vocabulary) -> Example:
    return Example(src_ids=tuple(vocab.encode(src_tokens)), tgt_ids=tuple(vocab.encode(tgt_tokens)))


def annotate_length(example: Example, max_len_index: int | None = None) -> Example | None:
    """Set ``J`` to the target subword count; ``None`` if it exceeds ``max_len_index``."""
    if not example.tgt_ids:
        raise DataError("cannot annotate the length of an empty target")
    target_length = len(example.tgt_ids)
    if max_len_index is not None and target_length > max_len_index:
        logger.warning("dropping example: target length %d exceeds L_max=%d", target_length, max_len_index)
        return None
    return dataclasses.replace(example, target_length=target_length)


def add_length_token(example: Example, vocab: Vocabulary) -> Example:
    """Insert ``<len_J>`` after the language tag (or first, when untagged)."""
    if example.target_length is None:
        raise DataError("add_length_token needs an annotated target length")
    form = length_token(example.target_length)
    if example.target_length < 1 or form not in vocab:
        raise DataError(
            f"no length token for J={example.target_length}; vocabulary covers 1..{vocab.max_length_token}"
        )
    position = 1 if example.lang_tag is not None else 0
    src = example.src_ids[:position] + (vocab.id_of(form),) + example.src_ids[position:]
    return dataclasses.replace(example, src_ids=src, n_control=example.n_control + 1)


def add_language_tag(example: Example, target_lang: str, vocab: Vocabulary) -> Example:
    """Prepend ``<2xx>`` naming the language the output should be in."""
    form = language_tag(target_lang)
    if form not in vocab:
        raise DataError(f"unknown target language {target_lang!r}; vocabulary knows {vocab.languages}")
    if example.lang_tag is not None:
        raise DataError(f"example is already tagged for {example.lang_tag!r}")
    return dataclasses.replace(
        example,
        src_ids=(vocab.id_of(form),) + example.src_ids,
        lang_tag=target_lang,
        n_control=example.n_control + 1,
    )


def compute_target_length(source_length: int, ratio: float) -> int:
    """``max(1, round_half_up(ratio * I))`` with decimal arithmetic."""
    if source_length < 1:
        raise DataError(f"source length must be >= 1, got {source_length}")
    if ratio <= 0:
        raise DataError(f"length ratio must be positive, got {ratio}")
    value = (Decimal(repr(float(ratio))) * source_length).quantize(Decimal(1), rounding=ROUND_HALF_UP)
    return max(1, int(value))


def build_examples(
    pairs: Iterable[tuple[Sequence[str], Sequence[str]]],
    vocab: Vocabulary,
    target_lang: str | None = None,
    length_token_on_source: bool = False,
    max_len_index: int | None = None,
) -> tuple[list[Example], int]:
    """Encode, annotate and tag token pairs; returns examples and the drop count."""
    examples, dropped = [], 0
    for src_tokens, tgt_tokens in pairs:
        example = annotate_length(make_example(src_tokens, tgt_tokens, vocab), max_len_index)
        if example is None:
            dropped += 1
            continue
        if target_lang is not None:
            example = add_language_tag(example, target_lang, vocab)
        if length_token_on_source:
            example = add_length_token(example, vocab)
        examples.append(example)
    if dropped:
        logger.warning("dropped %d examples whose target exceeds L_max=%s", dropped, max_len_index)
    return examples, dropped


def source_ids(
    tokens: Sequence[str],
    vocab: Vocabulary,
    target_lang: str | None = None,
    target_length: int | None = None,
) -> list[int]:
    """Encoder input for decoding: ``[<2xx>] [<len_J>] tokens``."""
    ids = []
    if target_lang is not None:
        form = language_tag(target_lang)
        if form not in vocab:
            raise DataError(f"unknown target language {target_lang!r}; vocabulary knows {vocab.languages}")
        ids.append(vocab.id_of(form))
    if target_length is not None:
        form = length_token(target_length)
        if form not in vocab:
            raise DataError(f"no length token for J={target_length}")
        ids.append(vocab.id_of(form))
    return ids + vocab.encode(tokens)


# =============================================================================
# Batching
# =============================================================================

@dataclass
class Batch:
    """Padded arrays for one optimizer step.

    ``tgt_in`` is ``[BOS] + y`` and ``tgt_out`` is ``y + [EOS]``; masks are True
    on real tokens.
    """

    src: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    target_lengths: np.ndarray | None
    src_mask: np.ndarray
    tgt_mask: np.ndarray

    def __len__(self) -> int:
        return int(self.src.shape[0])

    @property
    def n_target_tokens(self) -> int:
        return int(self.tgt_mask.sum())


def collate(examples: Sequence[Example]) -> Batch:
    if not examples:
        raise DataError("cannot collate an empty list of examples")
    n = len(examples)
    src_len = max(len(e.src_ids) for e in examples)
    tgt_len = max(len(e.tgt_ids) for e in examples) + 1
    src = np.full((n, src_len), PAD_ID, dtype=np.int64)
    tgt_in = np.full((n, tgt_len), PAD_ID, dtype=np.int64)
    tgt_out = np.full((n, tgt_len), PAD_ID, dtype=np.int64)
    for row, example in enumerate(examples):
        src[row, : len(example.src_ids)] = example.src_ids
        tgt_in[row, : len(example.tgt_ids) + 1] = (BOS_ID,) + example.tgt_ids
        tgt_out[row, : len(example.tgt_ids) + 1] = example.tgt_ids + (EOS_ID,)
    lengths = [e.target_length for e in examples]
    target_lengths = None if any(j is None for j in lengths) else np.array(lengths, dtype=np.int64)
    return Batch(
        src=src,
        tgt_in=tgt_in,
        tgt_out=tgt_out,
        target_lengths=target_lengths,
        src_mask=src != PAD_ID,
        tgt_mask=tgt_out != PAD_ID,
    )


def batch_examples(
    examples: Sequence[Example],
    max_tokens: int,
    max_seq_len: int,
    rng: "Rng | None" = None,
) -> tuple[list[Batch], int]:
    """Length-bucketed padded batches of at most ``max_tokens`` padded positions.

    Examples with a source or target longer than ``max_seq_len`` are dropped
    (counted and logged). Batch order is shuffled when ``rng`` is given.
    """
    if max_tokens < 1:
        raise DataError(f"max_tokens must be positive, got {max_tokens}")
    kept = [e for e in examples if len(e.src_ids) <= max_seq_len and len(e.tgt_ids) <= max_seq_len]
    dropped = len(examples) - len(kept)
    if dropped:
        logger.warning("dropped %d examples longer than max_seq_len=%d", dropped, max_seq_len)
    order = sorted(range(len(kept)), key=lambda i: (len(kept[i].src_ids), len(kept[i].tgt_ids), i))

    groups: list[list[Example]] = []
    current: list[Example] = []
    width = 0
    for i in order:
        example = kept[i]
        example_width = max(len(example.src_ids), len(example.tgt_ids) + 1)
        if current and (len(current) + 1) * max(width, example_width) > max_tokens:
            groups.append(current)
            current, width = [], 0
        current.append(example)
        width = max(width, example_width)
    if current:
        groups.append(current)

    if rng is not None:
        groups = [groups[i] for i in rng.permutation(len(groups))]
    return [collate(group) for group in groups], dropped


# =============================================================================
# Corpus files
# =============================================================================

def read_sentences(path: str | Path) -> list[list[str]]:
    """One sentence per line, space-separated tokens."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line.split() for line in lines]


def write_sentences(path: str | Path, sentences: Iterable[Sequence[str]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(" ".join(tokens) + "\n" for tokens in sentences), encoding="utf-8")


def read_parallel(prefix: str | Path) -> list[tuple[list[str], list[str]]]:
    """Aligned ``<prefix>.src`` / ``<prefix>.tgt`` files as token pairs."""
    prefix = Path(prefix)
    sources = read_sentences(prefix.with_name(prefix.name + ".src"))
    targets = read_sentences(prefix.with_name(prefix.name + ".tgt"))
    if len(sources) != len(targets):
        raise DataError(f"{prefix}: {len(sources)} source lines but {len(targets)} target lines")
    return list(zip(sources, targets))


def write_parallel(prefix: str | Path, pairs: Sequence[tuple[Sequence[str], Sequence[str]]]) -> None:
    prefix = Path(prefix)
    write_sentences(prefix.with_name(prefix.name + ".src"), [src for src, _ in pairs])
    write_sentences(prefix.with_name(prefix.name + ".tgt"), [tgt for _, tgt in pairs])
