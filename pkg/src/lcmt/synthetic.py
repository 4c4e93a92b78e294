"""
Synthetic parallel corpora with exactly known content
=====================================================

Every sentence is a sequence of distinct content symbols ``0 .. alphabet-1``.
Each language renders a symbol with its own surface forms, so vocabularies of
different languages never overlap:

* satellite languages ``L1 .. L4`` use one token per symbol, e.g. ``l1_07``;
* the pivot language ``E`` uses either a short form ``u07`` or a long,
  two-piece form ``t07@@ t07`` whose first piece is a continuation token.

A sentence of ``k`` symbols therefore has pivot renderings of every length in
``[k, 2k]``. Pivot-side targets additionally drop their leading (least
salient) symbols: the number dropped is ``Binomial(k - 1, p_drop)``.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .data import CONTINUATION_MARKER
from .errors import ConfigError, DataError
from .numerics import Rng

logger = logging.getLogger(__name__)

PIVOT = "E"


@dataclass
class SyntheticSpec:
    alphabet_size: int = 40
    min_symbols: int = 3
    max_symbols: int = 8
    satellites: tuple[str, ...] = ("L1", "L2", "L3", "L4")
    p_short: float = 0.5
    p_drop: float = 0.1
    seed: int = 1234

    def __post_init__(self):
        self.satellites = tuple(self.satellites)
        if not 1 <= self.alphabet_size <= 100:
            raise ConfigError(f"alphabet_size must lie in [1, 100], got {self.alphabet_size}")
        if not 1 <= self.min_symbols <= self.max_symbols <= self.alphabet_size:
            raise ConfigError(
                f"need 1 <= min_symbols ({self.min_symbols}) <= max_symbols ({self.max_symbols}) "
                f"<= alphabet_size ({self.alphabet_size})"
            )
        for name in ("p_short", "p_drop"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if PIVOT in self.satellites or len(set(self.satellites)) != len(self.satellites):
            raise ConfigError(f"satellite languages must be distinct and differ from {PIVOT!r}")
        for lang in self.satellites:
            if not re.fullmatch(r"[A-Za-z][A-Za-z0-9]*", lang):
                raise ConfigError(f"invalid language code {lang!r}")

    @property
    def languages(self) -> tuple[str, ...]:
        return (PIVOT,) + self.satellites

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["satellites"] = list(self.satellites)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        return cls(**data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"{path}: not a synthetic spec file ({exc})") from exc


def short_form(symbol: int) -> str:
    return f"u{symbol:02d}"


def long_form(symbol: int) -> tuple[str, str]:
    return f"t{symbol:02d}{CONTINUATION_MARKER}", f"t{symbol:02d}"


def satellite_form(lang: str, symbol: int) -> str:
    return f"{lang.lower()}_{symbol:02d}"


_PIVOT_TOKEN = re.compile(r"^(?:u(\d{2})|t(\d{2})(@@)?)$")


@dataclass(frozen=True)
class DecodedContent:
    symbols: tuple[int, ...]
    violations: int = 0

    @property
    def valid(self) -> bool:
        return self.violations == 0


@dataclass(frozen=True)
class SyntheticPair:
    source: list[str]
    target: list[str]
    symbols: tuple[int, ...]
    kept: tuple[int, ...]


class SyntheticLanguages:
    """Surface vocabularies and renderers for a :class:`SyntheticSpec`."""

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec
        self._owner: dict[str, str] = {}
        for symbol in range(spec.alphabet_size):
            for form in (short_form(symbol),) + long_form(symbol):
                self._owner[form] = PIVOT
            for lang in spec.satellites:
                self._owner[satellite_form(lang, symbol)] = lang

    def vocabulary(self, lang: str) -> set[str]:
        self._check_language(lang)
        return {form for form, owner in self._owner.items() if owner == lang}

    def language_of(self, token: str) -> str | None:
        return self._owner.get(token)

    def _check_language(self, lang: str) -> None:
        if lang not in self.spec.languages:
            raise DataError(f"unknown synthetic language {lang!r}; expected one of {self.spec.languages}")

    def render(self, symbols: Sequence[int], lang: str, long_forms: Sequence[bool] | None = None) -> list[str]:
        """Surface tokens for ``symbols``; ``long_forms`` picks pivot forms per symbol."""
        self._check_language(lang)
        if lang != PIVOT:
            return [satellite_form(lang, s) for s in symbols]
        if long_forms is None:
            long_forms = [False] * len(symbols)
        if len(long_forms) != len(symbols):
            raise DataError("long_forms must have one entry per symbol")
        tokens: list[str] = []
        for symbol, is_long in zip(symbols, long_forms):
            if is_long:
                tokens.extend(long_form(symbol))
            else:
                tokens.append(short_form(symbol))
        return tokens

    def render_random(self, symbols: Sequence[int], lang: str, rng: Rng) -> list[str]:
        if lang != PIVOT:
            return self.render(symbols, lang)
        long_forms = [bool(x) for x in rng.random(len(symbols)) >= self.spec.p_short]
        return self.render(symbols, lang, long_forms)

    def decode(self, tokens: Sequence[str], lang: str = PIVOT) -> DecodedContent:
        """Content symbols of ``tokens`` read as language ``lang``.

        A pivot long form ``tNN@@ tNN`` counts once. Tokens that do not belong
        to ``lang`` are counted as violations and skipped.
        """
        self._check_language(lang)
        symbols: list[int] = []
        violations = 0
        i = 0
        while i < len(tokens):
            token = tokens[i]
            if self._owner.get(token) != lang:
                violations += 1
                i += 1
                continue
            if lang != PIVOT:
                symbols.append(int(token.rsplit("_", 1)[1]))
                i += 1
                continue
            match = _PIVOT_TOKEN.match(token)
            symbol = int(match.group(1) or match.group(2))
            symbols.append(symbol)
            if match.group(3) and i + 1 < len(tokens) and tokens[i + 1] == long_form(symbol)[1]:
                i += 2
            else:
                i += 1
        return DecodedContent(tuple(symbols), violations)


def content_decode(tokens: Sequence[str], spec: SyntheticSpec | None = None) -> DecodedContent:
    """Pivot-language tokens -> content symbols, flagging foreign tokens."""
    return SyntheticLanguages(spec or SyntheticSpec()).decode(tokens, PIVOT)


def oracle_compression(symbols: Sequence[int], budget: int) -> tuple[int, ...]:
    """The most salient symbols that fit ``budget`` short-form tokens."""
    if budget < 1:
        raise DataError(f"budget must be >= 1, got {budget}")
    keep = min(len(symbols), budget)
    return tuple(symbols[len(symbols) - keep :])


def parse_direction(direction: str | Sequence[str], spec: SyntheticSpec) -> tuple[str, str]:
    """``"L1-E"`` -> ``("L1", "E")``."""
    parts = direction.split("-") if isinstance(direction, str) else list(direction)
    if len(parts) != 2 or any(p not in spec.languages for p in parts):
        raise ConfigError(f"invalid direction {direction!r}; use SRC-TGT with languages {spec.languages}")
    return parts[0], parts[1]


def synth_generate(
    spec: SyntheticSpec,
    n_sentences: int,
    direction: str | Sequence[str],
    split: str = "train",
) -> list[SyntheticPair]:
    """Reproducible parallel sentences for one direction and split.

    Pivot-side targets sample long/short forms and leading-symbol drops;
    other targets render the full content.
    """
    if n_sentences < 0:
        raise DataError(f"n_sentences must be >= 0, got {n_sentences}")
    src_lang, tgt_lang = parse_direction(direction, spec)
    languages = SyntheticLanguages(spec)
    rng = Rng(spec.seed).child("synthetic").child(split).child(f"{src_lang}-{tgt_lang}")
    pairs = []
    for _ in range(n_sentences):
        k = int(rng.integers(spec.min_symbols, spec.max_symbols + 1))
        symbols = tuple(int(s) for s in rng.permutation(spec.alphabet_size)[:k])
        source = languages.render_random(symbols, src_lang, rng)
        kept = symbols
        if tgt_lang == PIVOT:
            n_dropped = rng.binomial(k - 1, spec.p_drop) if k > 1 else 0
            kept = symbols[n_dropped:]
        target = languages.render_random(kept, tgt_lang, rng)
        pairs.append(SyntheticPair(source=source, target=target, symbols=symbols, kept=kept))
    logger.debug("generated %d %s sentences for %s-%s", n_sentences, split, src_lang, tgt_lang)
    return pairs
