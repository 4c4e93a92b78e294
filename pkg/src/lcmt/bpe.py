"""
Byte-pair encoding with the ``@@`` continuation convention
==========================================================

Words are split into characters, the last one carrying an internal end-of-word
marker ``</w>``; the most frequent adjacent symbol pair is merged repeatedly.
In the output every piece except the last of a word ends in ``@@``::

    marshmallow -> mar@@ shm@@ allow

so :func:`bpe_undo` only has to glue pieces at ``@@`` boundaries.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .data import CONTINUATION_MARKER
from .errors import DataError

logger = logging.getLogger(__name__)

END_OF_WORD = "</w>"


@dataclass
class BpeMerges:
    """Ordered merge table, highest priority first."""

    merges: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        if len(self.ranks) != len(self.merges):
            raise DataError("merge table contains duplicate pairs")
        self._cache: dict[str, tuple[str, ...]] = {}

    def __len__(self) -> int:
        return len(self.merges)

    def segment(self, word: str) -> tuple[str, ...]:
        """Pieces of ``word`` (without markers)."""
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        symbols = _word_symbols(word)
        while len(symbols) > 1:
            best = min(
                ((self.ranks[pair], i) for i, pair in enumerate(zip(symbols, symbols[1:])) if pair in self.ranks),
                default=None,
            )
            if best is None:
                break
            symbols = _merge_symbols(symbols, symbols[best[1]], symbols[best[1] + 1])
        pieces = tuple(symbols[:-1]) + (symbols[-1][: -len(END_OF_WORD)],)
        self._cache[word] = pieces
        return pieces

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{left} {right}\n" for left, right in self.merges), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BpeMerges":
        merges = []
        for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            parts = line.split(" ")
            if len(parts) != 2 or not all(parts):
                raise DataError(f"{path}:{number}: expected 'left right', got {line!r}")
            merges.append((parts[0], parts[1]))
        return cls(merges)


def _check_word(word: str) -> None:
    if word.endswith(CONTINUATION_MARKER):
        raise DataError(f"word {word!r} ends with the continuation marker {CONTINUATION_MARKER!r}")


def _word_symbols(word: str) -> tuple[str, ...]:
    _check_word(word)
    return tuple(word[:-1]) + (word[-1] + END_OF_WORD,)


def _merge_symbols(symbols: Sequence[str], left: str, right: str) -> tuple[str, ...]:
    merged, i = [], 0
    while i < len(symbols):
        if i < len(symbols) - 1 and symbols[i] == left and symbols[i + 1] == right:
            merged.append(left + right)
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return tuple(merged)


def _words(corpus: Iterable[str | Sequence[str]]) -> Iterable[str]:
    for sentence in corpus:
        yield from (sentence.split() if isinstance(sentence, str) else sentence)


def bpe_learn(corpus: Iterable[str | Sequence[str]], n_merges: int) -> BpeMerges:
    """Learn up to ``n_merges`` merges, most frequent pair first.

    Ties go to the lexicographically smallest pair. Stops early once no pair
    occurs anywhere. A merge producing the bare marker is never learned.
    """
    if n_merges < 0:
        raise DataError(f"n_merges must be >= 0, got {n_merges}")
    word_counts = Counter(_words(corpus))
    if not word_counts:
        raise DataError("cannot learn BPE merges from an empty corpus")
    vocab = Counter({_word_symbols(word): count for word, count in word_counts.items()})

    merges: list[tuple[str, str]] = []
    while len(merges) < n_merges:
        stats: Counter[tuple[str, str]] = Counter()
        for symbols, count in vocab.items():
            for pair in zip(symbols, symbols[1:]):
                if pair[0] + pair[1] != CONTINUATION_MARKER:
                    stats[pair] += count
        if not stats:
            logger.info("BPE stopped after %d merges: no pairs left", len(merges))
            break
        best = min(stats, key=lambda pair: (-stats[pair], pair))
        merges.append(best)
        updated: Counter[tuple[str, ...]] = Counter()
        for symbols, count in vocab.items():
            updated[_merge_symbols(symbols, *best)] += count
        vocab = updated
    logger.info("learned %d BPE merges over %d word types", len(merges), len(word_counts))
    return BpeMerges(merges)


def bpe_apply(text: str | Sequence[str], merges: BpeMerges) -> list[str]:
    """Segment whitespace-tokenized text into marked subword tokens."""
    tokens = []
    for word in text.split() if isinstance(text, str) else text:
        pieces = merges.segment(word)
        tokens.extend(piece + CONTINUATION_MARKER for piece in pieces[:-1])
        tokens.append(pieces[-1])
    return tokens


def bpe_undo(tokens: Sequence[str]) -> str:
    """Glue pieces at ``@@`` boundaries back into space-separated words."""
    words, current = [], []
    for token in tokens:
        if token.endswith(CONTINUATION_MARKER):
            current.append(token[: -len(CONTINUATION_MARKER)])
        else:
            current.append(token)
            words.append("".join(current))
            current = []
    if current:
        words.append("".join(current))
    return " ".join(words)
