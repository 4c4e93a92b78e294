"""
Training loop with top-k checkpoint averaging and exact resume
==============================================================

Every random draw during training is derived from the root seed and the step
number (``dropout/<step>``, ``shuffle/<epoch>``), so a run resumed from
``train_state.npz`` and ``last.lcmt`` reproduces the uninterrupted loss
trajectory. Float32 parameters round-trip bit-exactly through checkpoints;
with ``precision=float64`` the resumed run only matches to 32-bit accuracy.

Output directory layout::

    checkpoints/step_000200.lcmt   one per validation point
    last.lcmt, train_state.npz     latest parameters and optimizer/trainer state
    averaged.lcmt                  mean of the best ``average_k`` checkpoints
    train_log.tsv, valid_log.tsv   loss histories
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from .checkpoint import load_checkpoint, save_checkpoint, save_training_state, load_training_state
from .data import Batch, Example, Vocabulary, batch_examples, build_examples
from .errors import ConfigError, DataError
from .model import LengthMode, TransformerModel, average_checkpoints
from .numerics import AdamConfig, AdamState, Rng, adam_step, backward, no_grad

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 2000
    max_tokens: int = 1024
    save_every: int = 200
    average_k: int = 3
    log_every: int = 50
    progress: bool = True

    def __post_init__(self):
        for name in ("steps", "max_tokens", "save_every", "average_k", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass
class TrainResult:
    train_log: list[dict] = field(default_factory=list)
    valid_log: list[dict] = field(default_factory=list)
    best: list[tuple[float, int]] = field(default_factory=list)
    averaged: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def losses(self) -> dict[int, float]:
        return {row["step"]: row["loss"] for row in self.train_log}


def prepare_corpus(
    corpora: Mapping[tuple[str, str], Sequence[tuple[Sequence[str], Sequence[str]]]],
    length_mode: LengthMode | str,
    max_len_index: int,
    tag: bool | None = None,
    vocab: Vocabulary | None = None,
) -> tuple[Vocabulary, list[Example], bool]:
    """Vocabulary and encoded examples for one system.

    ``corpora`` maps ``(src_lang, tgt_lang)`` to token pairs. Sources are tagged
    with the target language when ``tag`` is true; ``None`` tags exactly when
    the system has more than one target language.
    """
    length_mode = LengthMode(length_mode)
    if not corpora:
        raise DataError("no training directions given")
    target_langs = sorted({tgt for _, tgt in corpora})
    if tag is None:
        tag = len(target_langs) > 1
    if vocab is None:
        sentences = [tokens for pairs in corpora.values() for pair in pairs for tokens in pair]
        vocab = Vocabulary.build(
            sentences,
            languages=target_langs if tag else (),
            max_len_index=max_len_index if length_mode is LengthMode.SOURCE_TOKEN else None,
        )
    examples: list[Example] = []
    for (src_lang, tgt_lang), pairs in corpora.items():
        encoded, _ = build_examples(
            pairs,
            vocab,
            target_lang=tgt_lang if tag else None,
            length_token_on_source=length_mode is LengthMode.SOURCE_TOKEN,
            max_len_index=max_len_index,
        )
        logger.info("%s-%s: %d examples", src_lang, tgt_lang, len(encoded))
        examples.extend(encoded)
    return vocab, examples, tag


class Trainer:
    """Adam training of a :class:`TransformerModel` on pre-encoded examples."""

    def __init__(
        self,
        model: TransformerModel,
        train_examples: Sequence[Example],
        valid_examples: Sequence[Example],
        config: TrainConfig,
        adam: AdamConfig,
        rng: Rng,
        out_dir: str | Path | None = None,
    ):
        if not train_examples:
            raise DataError("no training examples")
        if not valid_examples:
            raise DataError("no validation examples")
        self.model = model
        self.train_examples = list(train_examples)
        self.config = config
        self.adam = adam
        self.rng = rng
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.state = AdamState()
        self.result = TrainResult()
        self._top: list[tuple[float, int, dict[str, np.ndarray]]] = []
        self._epochs: dict[int, list[Batch]] = {}
        max_seq_len = model.config.max_seq_len
        self.valid_batches, _ = batch_examples(valid_examples, config.max_tokens, max_seq_len)
        first_epoch, _ = batch_examples(self.train_examples, config.max_tokens, max_seq_len)
        if not first_epoch:
            raise DataError("every training example exceeds max_seq_len")
        self.batches_per_epoch = len(first_epoch)

    # ------------------------------------------------------------- batches

    def _batch_for(self, step: int) -> Batch:
        epoch, index = divmod(step - 1, self.batches_per_epoch)
        if epoch not in self._epochs:
            self._epochs = {
                epoch: batch_examples(
                    self.train_examples,
                    self.config.max_tokens,
                    self.model.config.max_seq_len,
                    self.rng.child(f"shuffle/{epoch}"),
                )[0]
            }
        return self._epochs[epoch][index]

    # ---------------------------------------------------------- evaluation

    def validation_loss(self) -> float:
        total, tokens = 0.0, 0
        with no_grad():
            for batch in self.valid_batches:
                loss = self.model.forward_loss(batch).item()
                total += loss * batch.n_target_tokens
                tokens += batch.n_target_tokens
        return total / tokens

    # ----------------------------------------------------------------- loop

    def train_step(self, step: int) -> tuple[float, float]:
        batch = self._batch_for(step)
        self.model.zero_grad()
        loss = self.model.forward_loss(batch, training=True, rng=self.rng.child(f"dropout/{step}"))
        value = loss.item()
        backward(loss)
        lr = adam_step(self.model.parameters, None, self.state, self.adam)
        return value, lr

    def run(self, resume: bool = False) -> TrainResult:
        start = 1
        if resume:
            start = self._restore() + 1
        cfg = self.config
        steps = range(start, cfg.steps + 1)
        progress = tqdm(steps, desc="train", unit="step", disable=not cfg.progress, leave=False)
        window: list[float] = []
        for step in progress:
            loss, lr = self.train_step(step)
            self.result.train_log.append({"step": step, "loss": loss, "lr": lr})
            window.append(loss)
            if step % cfg.log_every == 0:
                logger.info("step %d: loss %.4f lr %.2e", step, float(np.mean(window)), lr)
                progress.set_postfix(loss=f"{np.mean(window):.3f}")
                window = []
            if step % cfg.save_every == 0 or step == cfg.steps:
                self._checkpoint(step)
        progress.close()
        self.result.best = [(loss, step) for loss, step, _ in self._top]
        self.result.averaged = average_checkpoints([params for _, _, params in self._top])
        if self.out_dir is not None:
            path = save_checkpoint(self.out_dir / "averaged.lcmt", self.model.config, self.result.averaged)
            logger.info("averaged %d best checkpoints (steps %s) into %s", len(self._top), [s for _, s in self.result.best], path)
        return self.result

    def _checkpoint(self, step: int) -> None:
        valid_loss = self.validation_loss()
        self.result.valid_log.append({"step": step, "valid_loss": valid_loss})
        logger.info("step %d: validation loss %.4f", step, valid_loss)
        params = self.model.state_dict()
        if all(s != step for _, s, _ in self._top):
            self._top.append((valid_loss, step, params))
            self._top.sort(key=lambda item: (item[0], item[1]))
            del self._top[self.config.average_k :]
        if self.out_dir is None:
            return
        save_checkpoint(self.out_dir / "checkpoints" / f"step_{step:06d}.lcmt", self.model.config, params)
        save_checkpoint(self.out_dir / "last.lcmt", self.model.config, params)
        save_training_state(
            self.out_dir / "train_state.npz",
            self.state,
            {
                "step": step,
                "train_log": self.result.train_log,
                "valid_log": self.result.valid_log,
                "top": [[loss, s] for loss, s, _ in self._top],
            },
        )
        pd.DataFrame(self.result.train_log).to_csv(self.out_dir / "train_log.tsv", sep="\t", index=False)
        pd.DataFrame(self.result.valid_log).to_csv(self.out_dir / "valid_log.tsv", sep="\t", index=False)

    def _restore(self) -> int:
        if self.out_dir is None:
            raise ConfigError("resuming needs an output directory")
        state_path = self.out_dir / "train_state.npz"
        if not state_path.exists():
            raise FileNotFoundError(f"no training state to resume from at {state_path}")
        self.state, meta = load_training_state(state_path)
        _, params = load_checkpoint(self.out_dir / "last.lcmt")
        self.model.load_state_dict(params)
        self.result.train_log = list(meta["train_log"])
        self.result.valid_log = list(meta["valid_log"])
        self._top = []
        for loss, step in meta["top"]:
            _, saved = load_checkpoint(self.out_dir / "checkpoints" / f"step_{step:06d}.lcmt")
            self._top.append((float(loss), int(step), saved))
        step = int(meta["step"])
        logger.info("resumed from step %d", step)
        return step
