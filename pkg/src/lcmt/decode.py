"""
Constrained greedy and beam search
==================================

Each step turns the model's next-token distribution ``p`` into ``p'`` by
applying, in order:

1. the ban mask: PAD, UNK, BOS, language tags and length tokens are never
   generated;
2. the complexity constraint: an optional soft penalty ``exp(-gamma)`` on
   continuation tokens (forms ending in ``@@``) and, once ``B`` of them have
   been produced, a hard mask on all of them;
3. the length constraint: with a hard target ``J``, EOS gets probability 0
   while generating tokens ``1 .. J`` and probability 1 at step ``J + 1``.

Steps are 1-based: step ``j`` produces token ``y_j``. Every mask renormalises,
so hard-length decoding returns exactly ``J`` tokens for any model.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .data import CONTINUATION_MARKER, EOS_ID, Vocabulary, compute_target_length, source_ids
from .errors import ConfigError, ConstraintConflict, DataError
from .model import LengthMode, TransformerModel

logger = logging.getLogger(__name__)


class LengthKind(str, Enum):
    NONE = "none"
    SOFT = "soft"
    HARD = "hard"


@dataclass(frozen=True)
class Constraint:
    """Decoding contract: a length variant, optionally with a complexity budget.

    ``budget=None`` means no hard limit on continuation tokens; ``penalty`` is
    the soft per-token cost ``gamma``.
    """

    length: LengthKind = LengthKind.NONE
    target_length: int | None = None
    budget: int | None = None
    penalty: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "length", LengthKind(self.length))
        if self.length is LengthKind.NONE:
            if self.target_length is not None:
                raise ConfigError("an unconstrained decode takes no target length")
        elif self.target_length is None or self.target_length < 1:
            raise ConfigError(f"{self.length.value} length constraint needs J >= 1, got {self.target_length}")
        if self.budget is not None and self.budget < 0:
            raise ConfigError(f"complexity budget must be >= 0, got {self.budget}")
        if self.penalty < 0:
            raise ConfigError(f"complexity penalty must be >= 0, got {self.penalty}")

    @classmethod
    def none(cls) -> "Constraint":
        return cls()

    @classmethod
    def soft(cls, target_length: int) -> "Constraint":
        return cls(LengthKind.SOFT, target_length)

    @classmethod
    def hard(cls, target_length: int) -> "Constraint":
        return cls(LengthKind.HARD, target_length)

    def with_complexity(self, budget: int | None, penalty: float = 0.0) -> "Constraint":
        return dataclasses.replace(self, budget=budget, penalty=penalty)

    @property
    def is_hard(self) -> bool:
        return self.length is LengthKind.HARD

    @property
    def has_complexity(self) -> bool:
        return self.budget is not None or self.penalty > 0

    def describe(self) -> str:
        parts = ["none" if self.length is LengthKind.NONE else f"{self.length.value}_length(J={self.target_length})"]
        if self.has_complexity:
            budget = "inf" if self.budget is None else self.budget
            parts.append(f"complexity(B={budget}, gamma={self.penalty:g})")
        return " + ".join(parts)


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...] = ()
    log_prob: float = 0.0
    continuation_count: int = 0
    finished: bool = False
    cap_hit: bool = False

    def score(self, length_normalize: bool) -> float:
        if not length_normalize:
            return self.log_prob
        return self.log_prob / (len(self.tokens) + 1)


@dataclass(frozen=True)
class TokenMasks:
    """Per-id flags for a vocabulary: never-generated ids and continuation tokens."""

    banned: np.ndarray
    continuation: np.ndarray
    eos_id: int = EOS_ID

    @classmethod
    def from_vocabulary(cls, vocab: Vocabulary) -> "TokenMasks":
        banned = np.zeros(len(vocab), dtype=bool)
        banned[vocab.banned_ids()] = True
        return cls(banned=banned, continuation=vocab.continuation_mask())

    def __len__(self) -> int:
        return len(self.banned)


def count_continuation(tokens: Sequence[str]) -> int:
    """Number of tokens that do not end a word."""
    return sum(1 for token in tokens if token.endswith(CONTINUATION_MARKER))


def _uniform(allowed: np.ndarray) -> np.ndarray:
    return allowed.astype(np.float64) / allowed.sum()


def eos_mask_renormalize(
    p: np.ndarray,
    j: int,
    target_length: int,
    eos_id: int = EOS_ID,
    allowed: np.ndarray | None = None,
) -> np.ndarray:
    """Hard length rule for step ``j``: forbid EOS while ``j <= J``, force it after."""
    if j < 1:
        raise ValueError(f"steps are 1-based, got j={j}")
    p = np.asarray(p, dtype=np.float64)
    if j > target_length:
        out = np.zeros_like(p)
        out[eos_id] = 1.0
        return out
    out = p.copy()
    out[eos_id] = 0.0
    mass = out.sum()
    if mass <= 0.0:
        fallback = np.ones(p.shape, dtype=bool) if allowed is None else allowed.copy()
        fallback[eos_id] = False
        if not fallback.any():
            raise ConstraintConflict(f"no token other than EOS may be generated at step {j} of J={target_length}")
        logger.warning("all probability mass on EOS at step %d < J=%d; falling back to uniform", j, target_length)
        return _uniform(fallback)
    return out / mass


def complexity_mask(
    p: np.ndarray,
    used: int,
    budget: int | None,
    continuation: np.ndarray,
    penalty: float = 0.0,
    eos_id: int = EOS_ID,
    allowed: np.ndarray | None = None,
) -> np.ndarray:
    """Penalise continuation tokens by ``exp(-penalty)`` and drop them once ``used >= budget``."""
    p = np.asarray(p, dtype=np.float64)
    exhausted = budget is not None and used >= budget
    if not exhausted and penalty == 0.0:
        return p.copy()
    out = p.copy()
    if penalty > 0.0:
        out[continuation] *= math.exp(-penalty)
    if exhausted:
        out[continuation] = 0.0
    mass = out.sum()
    if mass <= 0.0:
        fallback = ~continuation if allowed is None else allowed & ~continuation
        fallback = fallback.copy()
        fallback[eos_id] = False
        if not fallback.any():
            raise ConstraintConflict(f"complexity budget B={budget} leaves no word-final token to generate")
        logger.warning("all probability mass on continuation tokens with budget exhausted; falling back to uniform")
        return _uniform(fallback)
    return out / mass


def _ban(p: np.ndarray, masks: TokenMasks) -> np.ndarray:
    out = np.where(masks.banned, 0.0, p)
    mass = out.sum()
    if mass <= 0.0:
        logger.warning("all probability mass on banned tokens; falling back to uniform")
        return _uniform(~masks.banned)
    return out / mass


def step_distribution(
    log_probs: np.ndarray,
    j: int,
    constraint: Constraint,
    used: int,
    masks: TokenMasks,
    max_seq_len: int,
) -> tuple[np.ndarray, bool]:
    """Constrained distribution for step ``j`` and whether the length cap forced EOS."""
    p = np.exp(np.asarray(log_probs, dtype=np.float64))
    p /= p.sum()
    p = _ban(p, masks)
    allowed = ~masks.banned
    if constraint.budget is not None and used >= constraint.budget:
        allowed = allowed & ~masks.continuation
    if constraint.has_complexity:
        p = complexity_mask(p, used, constraint.budget, masks.continuation, constraint.penalty, masks.eos_id, allowed)
    if constraint.is_hard:
        return eos_mask_renormalize(p, j, constraint.target_length, masks.eos_id, allowed), False
    if j > max_seq_len:
        return eos_mask_renormalize(p, j, max_seq_len, masks.eos_id, allowed), True
    return p, False


def _log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def _check(model: TransformerModel, constraint: Constraint, masks: TokenMasks) -> None:
    cfg = model.config
    if len(masks) != cfg.vocab_size:
        raise ConfigError(f"token masks cover {len(masks)} ids but the model has {cfg.vocab_size}")
    if cfg.length_mode.needs_target_length and constraint.length is LengthKind.NONE:
        raise ConstraintConflict(
            f"a {cfg.length_mode.value} model needs a target length; use a soft or hard length constraint"
        )
    if constraint.is_hard and constraint.target_length > cfg.max_seq_len:
        raise ConstraintConflict(
            f"hard_length(J={constraint.target_length}) exceeds max_seq_len={cfg.max_seq_len}"
        )


def _model_length(model: TransformerModel, constraint: Constraint) -> int | None:
    if model.config.length_mode is LengthMode.NONE:
        return None
    return constraint.target_length


def greedy_decode(
    model: TransformerModel,
    src_ids: Sequence[int],
    constraint: Constraint,
    masks: TokenMasks,
) -> Hypothesis:
    """Most probable token at each step under the constraint (ties: lowest id)."""
    _check(model, constraint, masks)
    state = model.start(src_ids, _model_length(model, constraint))
    hyp = Hypothesis()
    while not hyp.finished:
        j = len(hyp.tokens) + 1
        dist, capped = step_distribution(
            model.decode_step(state), j, constraint, hyp.continuation_count, masks, model.config.max_seq_len
        )
        log_dist = _log(dist)
        token = int(np.argmax(log_dist))
        if not np.isfinite(log_dist[token]):
            raise ConstraintConflict(f"every token is masked at step {j} under {constraint.describe()}")
        hyp = _extend(hyp, token, float(log_dist[token]), masks, capped)
        if not hyp.finished:
            state = state.advance(token)
    return hyp


def _extend(hyp: Hypothesis, token: int, log_prob: float, masks: TokenMasks, capped: bool) -> Hypothesis:
    if token == masks.eos_id:
        return dataclasses.replace(hyp, log_prob=hyp.log_prob + log_prob, finished=True, cap_hit=capped)
    return Hypothesis(
        tokens=hyp.tokens + (token,),
        log_prob=hyp.log_prob + log_prob,
        continuation_count=hyp.continuation_count + int(masks.continuation[token]),
    )


def beam_search(
    model: TransformerModel,
    src_ids: Sequence[int],
    constraint: Constraint,
    masks: TokenMasks,
    beam_size: int = 4,
) -> list[Hypothesis]:
    """n-best list of finished hypotheses, best first.

    Under a hard length constraint every hypothesis has ``J`` tokens and is
    ranked by total log-probability; otherwise by log-probability divided by
    length (EOS included). ``beam_size=1`` reproduces :func:`greedy_decode`.
    """
    if beam_size < 1:
        raise ConfigError(f"beam_size must be >= 1, got {beam_size}")
    _check(model, constraint, masks)
    state = model.start(src_ids, _model_length(model, constraint))
    live = [Hypothesis()]
    finished: list[Hypothesis] = []
    j = 0
    while live and len(finished) < beam_size:
        j += 1
        log_probs = model.next_log_probs(state, np.array([h.tokens for h in live], dtype=np.int64).reshape(len(live), j - 1))
        candidates = []
        capped_at = {}
        for parent, hyp in enumerate(live):
            dist, capped = step_distribution(
                log_probs[parent], j, constraint, hyp.continuation_count, masks, model.config.max_seq_len
            )
            capped_at[parent] = capped
            log_dist = _log(dist)
            for token in np.flatnonzero(np.isfinite(log_dist)):
                lp = float(log_dist[token])
                candidates.append((hyp.log_prob + lp, lp, int(token), parent))
        if not candidates:
            raise ConstraintConflict(f"beam collapsed at step {j}: every candidate is masked under {constraint.describe()}")
        candidates.sort(key=lambda c: (-c[0], -c[1], c[2], c[3]))
        next_live = []
        for _, lp, token, parent in candidates[: beam_size - len(finished)]:
            extended = _extend(live[parent], token, lp, masks, capped_at[parent])
            (finished if extended.finished else next_live).append(extended)
        live = next_live

    normalize = not constraint.is_hard
    finished.sort(key=lambda h: (-h.score(normalize), h.tokens))
    return finished


# =============================================================================
# Sentence-level translation
# =============================================================================

@dataclass(frozen=True)
class ConstraintRequest:
    """Parsed ``--constraint`` value: ``none``, ``soft:R``, ``hard:R`` or ``oracle``.

    ``ratio=None`` on a soft/hard request means the reference length is used.
    """

    length: LengthKind = LengthKind.NONE
    ratio: float | None = None

    @classmethod
    def parse(cls, text: str, default_ratio: float | None = None) -> "ConstraintRequest":
        text = text.strip().lower()
        if text == "none":
            return cls()
        if text == "oracle":
            return cls(LengthKind.HARD, None)
        kind, _, value = text.partition(":")
        if kind not in ("soft", "hard"):
            raise ConfigError(f"invalid constraint {text!r}; expected none, soft:R, hard:R or oracle")
        if value in ("", "r"):
            if default_ratio is None:
                raise ConfigError(f"constraint {text!r} needs a ratio (e.g. {kind}:0.8 or --ratio)")
            return cls(LengthKind(kind), float(default_ratio))
        if value == "oracle":
            return cls(LengthKind(kind), None)
        try:
            ratio = float(value)
        except ValueError:
            raise ConfigError(f"invalid length ratio {value!r} in constraint {text!r}") from None
        if ratio <= 0:
            raise ConfigError(f"length ratio must be positive, got {ratio}")
        return cls(LengthKind(kind), ratio)

    @property
    def needs_reference(self) -> bool:
        return self.length is not LengthKind.NONE and self.ratio is None

    def resolve(self, source_length: int, reference_length: int | None = None) -> Constraint:
        if self.length is LengthKind.NONE:
            return Constraint()
        if self.ratio is None:
            if not reference_length:
                raise DataError("oracle length constraint needs a non-empty reference")
            return Constraint(self.length, reference_length)
        return Constraint(self.length, compute_target_length(source_length, self.ratio))


@dataclass(frozen=True)
class TranslationResult:
    tokens: list[str]
    constraint: Constraint
    log_prob: float
    cap_hit: bool


class Translator:
    """Decode whole sentences: add control tokens, search, map ids back to forms."""

    def __init__(self, model: TransformerModel, vocab: Vocabulary, beam_size: int = 1, workers: int = 1):
        if len(vocab) != model.config.vocab_size:
            raise ConfigError(f"vocabulary has {len(vocab)} entries but the model expects {model.config.vocab_size}")
        if workers < 1:
            raise ConfigError(f"workers must be >= 1, got {workers}")
        self.model = model
        self.vocab = vocab
        self.masks = TokenMasks.from_vocabulary(vocab)
        self.beam_size = beam_size
        self.workers = workers

    def _check_target(self, target_lang: str | None) -> None:
        if target_lang is None and self.vocab.languages:
            raise ConfigError(
                f"the model was trained with target-language tags for {self.vocab.languages}; pass a target language"
            )

    def translate_one(self, tokens: Sequence[str], constraint: Constraint, target_lang: str | None = None) -> TranslationResult:
        self._check_target(target_lang)
        if not tokens:
            raise DataError("cannot translate an empty sentence")
        length_token = None
        if self.model.config.length_mode is LengthMode.SOURCE_TOKEN and constraint.target_length is not None:
            length_token = constraint.target_length
        src = source_ids(tokens, self.vocab, target_lang, length_token)
        if self.beam_size == 1:
            best = greedy_decode(self.model, src, constraint, self.masks)
        else:
            best = beam_search(self.model, src, constraint, self.masks, self.beam_size)[0]
        if best.cap_hit:
            logger.warning("output reached max_seq_len=%d without EOS", self.model.config.max_seq_len)
        return TranslationResult(
            tokens=self.vocab.decode(best.tokens),
            constraint=constraint,
            log_prob=best.log_prob,
            cap_hit=best.cap_hit,
        )

    def translate(
        self,
        sentences: Sequence[Sequence[str]],
        constraints: Sequence[Constraint],
        target_lang: str | None = None,
    ) -> list[TranslationResult]:
        """Translate every sentence; results keep input order."""
        if len(sentences) != len(constraints):
            raise DataError(f"{len(sentences)} sentences but {len(constraints)} constraints")
        self._check_target(target_lang)
        jobs = list(zip(sentences, constraints))
        if self.workers == 1:
            return [self.translate_one(tokens, c, target_lang) for tokens, c in jobs]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(lambda job: self.translate_one(job[0], job[1], target_lang), jobs))
