"""
Length-aware transformer encoder-decoder
========================================

A pre-norm transformer built on :mod:`lcmt.numerics`, with four ways of telling
the decoder how long its output should be:

``none``
    Plain model; the target length is never seen.
``source_token``
    The length arrives as an ordinary ``<len_J>`` token on the source side
    (added by :func:`lcmt.data.add_length_token`). No extra parameters.
``decoder_embedding``
    The first decoder input is ``relu(W_len @ [h0; lenEmb(r)] + b_len)`` where
    ``h0 = emb(y_{j-1}) + pe(j)`` and ``r`` is the remaining length.
``reverse_positional``
    The decoder positional encoding counts down: ``pe(r)`` instead of ``pe(j)``.

The remaining length at step ``j`` (1-based index of the token being
produced) is ``r = min(L_max, max(0, J - j))``.

Parameter names and shapes (``d = d_model``, ``V = vocab_size``)::

    embed.tokens                          V x d        shared by encoder and decoder
    encoder.{i}.norm{1,2}.{gain,bias}     d
    encoder.{i}.self_attn.{q,k,v,o}.weight / .bias   d x d / d
    encoder.{i}.ffn.{in,out}.weight / .bias          d x d_ff, d_ff x d
    encoder.norm.{gain,bias}              d
    decoder.{i}.norm{1,2,3}.{gain,bias}   d
    decoder.{i}.{self,cross}_attn.{q,k,v,o}.weight / .bias
    decoder.{i}.ffn.{in,out}.weight / .bias
    decoder.norm.{gain,bias}              d
    output.weight / output.bias           d x V / V
    length.embedding                      (L_max + 1) x d_len     decoder_embedding only
    length.proj.weight / .bias            (d + d_len) x d / d     decoder_embedding only
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .data import BOS_ID, PAD_ID, UNK_ID, Batch
from .errors import CheckpointError, ConfigError, DataError
from .numerics import (
    PRECISIONS,
    Rng,
    Tensor,
    add,
    concat_last_dim,
    cross_entropy,
    dropout,
    embedding_lookup,
    layer_norm,
    linear,
    log_softmax,
    matmul,
    no_grad,
    precision,
    relu,
    reshape,
    scale,
    softmax,
    transpose,
)

logger = logging.getLogger(__name__)

MASK_VALUE = -1e9


class LengthMode(str, Enum):
    NONE = "none"
    SOURCE_TOKEN = "source_token"
    DECODER_EMBEDDING = "decoder_embedding"
    REVERSE_POSITIONAL = "reverse_positional"

    @property
    def needs_target_length(self) -> bool:
        """True when decoding is meaningless without a target length J."""
        return self is not LengthMode.NONE

    @property
    def conditions_decoder(self) -> bool:
        return self in (LengthMode.DECODER_EMBEDDING, LengthMode.REVERSE_POSITIONAL)


@dataclass
class ModelConfig:
    """Hyperparameters of :class:`TransformerModel`.

    ``n_reserved`` is the number of leading vocabulary ids (specials, language
    tags, length tokens) that word dropout never replaces.
    """

    vocab_size: int
    n_layers: int = 2
    d_model: int = 64
    d_ff: int = 256
    n_heads: int = 4
    dropout: float = 0.1
    word_dropout: float = 0.1
    max_seq_len: int = 48
    max_len_index: int = 64
    d_len: int | None = None
    length_mode: LengthMode = LengthMode.NONE
    precision: str = "float32"
    n_reserved: int = 4

    def __post_init__(self):
        try:
            self.length_mode = LengthMode(self.length_mode)
        except ValueError:
            raise ConfigError(
                f"unknown length mode {self.length_mode!r}; expected one of {[m.value for m in LengthMode]}"
            ) from None
        if self.d_len is None:
            self.d_len = max(1, self.d_model // 8)
        if self.vocab_size < 5:
            raise ConfigError(f"vocab_size must cover the reserved ids, got {self.vocab_size}")
        if self.n_layers < 1 or self.n_heads < 1 or self.d_ff < 1 or self.d_len < 1:
            raise ConfigError("n_layers, n_heads, d_ff and d_len must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even for sinusoidal encodings, got {self.d_model}")
        if self.max_len_index < self.max_seq_len:
            raise ConfigError(
                f"max_len_index (L_max={self.max_len_index}) must be >= max_seq_len ({self.max_seq_len})"
            )
        for name in ("dropout", "word_dropout"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {value}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")
        if not 4 <= self.n_reserved <= self.vocab_size:
            raise ConfigError(f"n_reserved={self.n_reserved} outside [4, vocab_size]")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["length_mode"] = self.length_mode.value
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig fields: {sorted(unknown)}")
        return cls(**dict(data))

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


# =============================================================================
# Positional encodings
# =============================================================================

def _inverse_frequencies(d_model: int) -> np.ndarray:
    if d_model <= 0 or d_model % 2:
        raise ConfigError(f"d_model must be a positive even number, got {d_model}")
    return np.exp(np.arange(0, d_model, 2, dtype=np.float64) * (-math.log(10000.0) / d_model))


def positional_encoding(position: int, d_model: int) -> np.ndarray:
    """Sinusoidal encoding of one position: ``[sin(p w_0), cos(p w_0), sin(p w_1), ...]``."""
    if position < 0:
        raise DataError(f"position must be non-negative, got {position}")
    angles = np.array([position], dtype=np.float64)[:, None] * _inverse_frequencies(d_model)[None, :]
    out = np.empty((1, d_model), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out[0]


@lru_cache(maxsize=32)
def positional_table(n_positions: int, d_model: int) -> np.ndarray:
    """Rows ``0 .. n_positions-1`` of :func:`positional_encoding` (read-only, float64)."""
    angles = np.arange(n_positions, dtype=np.float64)[:, None] * _inverse_frequencies(d_model)[None, :]
    table = np.empty((n_positions, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    table.setflags(write=False)
    return table


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every parameter; a pure function of ``config``."""
    d, f = config.d_model, config.d_ff
    shapes: dict[str, tuple[int, ...]] = {"embed.tokens": (config.vocab_size, d)}

    def norm(prefix):
        shapes[f"{prefix}.gain"] = (d,)
        shapes[f"{prefix}.bias"] = (d,)

    def attention(prefix):
        for part in "qkvo":
            shapes[f"{prefix}.{part}.weight"] = (d, d)
            shapes[f"{prefix}.{part}.bias"] = (d,)

    def ffn(prefix):
        shapes[f"{prefix}.in.weight"] = (d, f)
        shapes[f"{prefix}.in.bias"] = (f,)
        shapes[f"{prefix}.out.weight"] = (f, d)
        shapes[f"{prefix}.out.bias"] = (d,)

    for i in range(config.n_layers):
        norm(f"encoder.{i}.norm1")
        attention(f"encoder.{i}.self_attn")
        norm(f"encoder.{i}.norm2")
        ffn(f"encoder.{i}.ffn")
    norm("encoder.norm")
    for i in range(config.n_layers):
        norm(f"decoder.{i}.norm1")
        attention(f"decoder.{i}.self_attn")
        norm(f"decoder.{i}.norm2")
        attention(f"decoder.{i}.cross_attn")
        norm(f"decoder.{i}.norm3")
        ffn(f"decoder.{i}.ffn")
    norm("decoder.norm")
    shapes["output.weight"] = (d, config.vocab_size)
    shapes["output.bias"] = (config.vocab_size,)
    if config.length_mode is LengthMode.DECODER_EMBEDDING:
        shapes["length.embedding"] = (config.max_len_index + 1, config.d_len)
        shapes["length.proj.weight"] = (d + config.d_len, d)
        shapes["length.proj.bias"] = (d,)
    return shapes


def count_parameters(config: ModelConfig) -> int:
    return int(sum(math.prod(shape) for shape in parameter_shapes(config).values()))


def _initial_value(name: str, shape: tuple[int, ...], rng: Rng) -> np.ndarray:
    if name in ("embed.tokens", "length.embedding"):
        return rng.normal(0.0, shape[1] ** -0.5, shape)
    if name.endswith(".gain"):
        return np.ones(shape)
    if name.endswith(".bias"):
        return np.zeros(shape)
    limit = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, shape)


# =============================================================================
# Decoder state
# =============================================================================

@dataclass
class DecoderState:
    """Everything needed to score the next token of one sentence.

    ``j`` is the 1-based index of the token about to be generated and
    ``prefix`` holds ``y_1 .. y_{j-1}``.
    """

    memory: Tensor
    source_bias: np.ndarray
    target_length: int | None
    max_len_index: int
    prefix: list[int] = field(default_factory=list)

    @property
    def j(self) -> int:
        return len(self.prefix) + 1

    @property
    def remaining(self) -> int:
        if self.target_length is None:
            return 0
        return min(self.max_len_index, max(0, self.target_length - self.j))

    def advance(self, token: int) -> "DecoderState":
        return dataclasses.replace(self, prefix=self.prefix + [int(token)])


# =============================================================================
# Model
# =============================================================================

class TransformerModel:
    """Named parameter bundle plus the forward computations over it."""

    def __init__(self, config: ModelConfig, rng: Rng | None = None, parameters: Mapping[str, np.ndarray] | None = None):
        self.config = config
        dtype = config.dtype
        shapes = parameter_shapes(config)
        if parameters is None:
            if rng is None:
                raise ValueError("either rng or parameters is required")
            init_rng = rng.child("init")
            parameters = {name: _initial_value(name, shape, init_rng) for name, shape in shapes.items()}
        self.parameters: dict[str, Tensor] = {}
        for name, shape in shapes.items():
            if name not in parameters:
                raise CheckpointError(f"missing parameter {name!r}")
            value = np.asarray(parameters[name])
            if value.shape != shape:
                raise CheckpointError(f"parameter {name!r} has shape {value.shape}, expected {shape}")
            self.parameters[name] = Tensor(value, requires_grad=True, dtype=dtype, name=name)
        extra = set(parameters) - set(shapes)
        if extra:
            raise CheckpointError(f"unexpected parameters for this config: {sorted(extra)}")
        n_positions = max(config.max_len_index + 1, config.max_seq_len + 2)
        self._positions = positional_table(n_positions, config.d_model).astype(dtype)
        logger.debug("built %s model with %d parameters", config.length_mode.value, self.num_parameters())

    # ---------------------------------------------------------------- state

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.parameters.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        if set(state) != set(self.parameters):
            missing = sorted(set(self.parameters) - set(state))
            extra = sorted(set(state) - set(self.parameters))
            raise CheckpointError(f"parameter names differ (missing={missing}, unexpected={extra})")
        for name, tensor in self.parameters.items():
            value = np.asarray(state[name])
            if value.shape != tensor.shape:
                raise CheckpointError(f"parameter {name!r} has shape {value.shape}, expected {tensor.shape}")
            tensor.data[...] = value.astype(tensor.dtype)

    def zero_grad(self) -> None:
        for tensor in self.parameters.values():
            tensor.grad = None

    # ------------------------------------------------------------ positions

    def remaining_lengths(self, steps: np.ndarray, target_lengths: np.ndarray) -> np.ndarray:
        target_lengths = np.asarray(target_lengths, dtype=np.int64).reshape(-1, 1)
        return np.clip(target_lengths - steps, 0, self.config.max_len_index)

    def decoder_positions(self, steps: np.ndarray, target_lengths: np.ndarray | None) -> np.ndarray:
        if self.config.length_mode is LengthMode.REVERSE_POSITIONAL:
            return self.remaining_lengths(steps, target_lengths)
        return steps

    def positional_component(self, j: int, target_length: int | None = None) -> np.ndarray:
        """The positional vector added to the decoder input at step ``j``."""
        steps = np.array([[j]], dtype=np.int64)
        lengths = None if target_length is None else np.array([target_length])
        return self._positions[self.decoder_positions(steps, lengths)[0, 0]]

    # -------------------------------------------------------------- helpers

    def _p(self, name: str) -> Tensor:
        return self.parameters[name]

    def _norm(self, x: Tensor, prefix: str) -> Tensor:
        return layer_norm(x, self._p(f"{prefix}.gain"), self._p(f"{prefix}.bias"))

    def _split_heads(self, x: Tensor) -> Tensor:
        batch, length, width = x.shape
        heads = self.config.n_heads
        return transpose(reshape(x, (batch, length, heads, width // heads)), (0, 2, 1, 3))

    def _attention(self, prefix: str, queries: Tensor, keys: Tensor, bias: Tensor) -> Tensor:
        q = self._split_heads(linear(queries, self._p(f"{prefix}.q.weight"), self._p(f"{prefix}.q.bias")))
        k = self._split_heads(linear(keys, self._p(f"{prefix}.k.weight"), self._p(f"{prefix}.k.bias")))
        v = self._split_heads(linear(keys, self._p(f"{prefix}.v.weight"), self._p(f"{prefix}.v.bias")))
        head_width = self.config.d_model // self.config.n_heads
        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(head_width))
        weights = softmax(add(scores, bias))
        context = matmul(weights, v)
        batch, _, length, _ = context.shape
        merged = reshape(transpose(context, (0, 2, 1, 3)), (batch, length, self.config.d_model))
        return linear(merged, self._p(f"{prefix}.o.weight"), self._p(f"{prefix}.o.bias"))

    def _feed_forward(self, prefix: str, x: Tensor) -> Tensor:
        hidden = relu(linear(x, self._p(f"{prefix}.in.weight"), self._p(f"{prefix}.in.bias")))
        return linear(hidden, self._p(f"{prefix}.out.weight"), self._p(f"{prefix}.out.bias"))

    def _word_dropout(self, ids: np.ndarray, training: bool, rng: Rng | None) -> np.ndarray:
        p = self.config.word_dropout
        if not training or p == 0.0:
            return ids
        if rng is None:
            raise ValueError("word dropout in training mode needs an Rng")
        dropped = (rng.random(ids.shape) < p) & (ids >= self.config.n_reserved)
        return np.where(dropped, UNK_ID, ids)

    def _embed(self, ids: np.ndarray) -> Tensor:
        table = embedding_lookup(self._p("embed.tokens"), ids)
        return scale(table, math.sqrt(self.config.d_model))

    @staticmethod
    def source_bias(src_ids: np.ndarray) -> np.ndarray:
        """Additive attention bias of shape (B, 1, 1, S): 0 on tokens, -1e9 on PAD."""
        src_ids = np.asarray(src_ids)
        return np.where(src_ids == PAD_ID, MASK_VALUE, 0.0)[:, None, None, :]

    # -------------------------------------------------------------- forward

    def encode(self, src_ids, training: bool = False, rng: Rng | None = None) -> Tensor:
        """Encoder memory of shape (B, S, d_model) for padded ``src_ids`` (B, S)."""
        src_ids = np.atleast_2d(np.asarray(src_ids, dtype=np.int64))
        self._check_ids(src_ids)
        cfg = self.config
        if src_ids.shape[1] > cfg.max_seq_len:
            raise DataError(f"source of length {src_ids.shape[1]} exceeds max_seq_len={cfg.max_seq_len}")
        with precision(cfg.precision):
            word_rng = rng.child("source") if rng is not None else None
            drop_rng = rng.child("encoder") if rng is not None else None
            ids = self._word_dropout(src_ids, training, word_rng)
            positions = Tensor(self._positions[np.arange(src_ids.shape[1])])
            x = dropout(add(self._embed(ids), positions), cfg.dropout, drop_rng, training)
            bias = Tensor(self.source_bias(src_ids))
            for i in range(cfg.n_layers):
                prefix = f"encoder.{i}"
                h = self._norm(x, f"{prefix}.norm1")
                x = add(x, dropout(self._attention(f"{prefix}.self_attn", h, h, bias), cfg.dropout, drop_rng, training))
                h = self._norm(x, f"{prefix}.norm2")
                x = add(x, dropout(self._feed_forward(f"{prefix}.ffn", h), cfg.dropout, drop_rng, training))
            return self._norm(x, "encoder.norm")

    def decoder_inputs(
        self,
        ids: np.ndarray,
        steps: np.ndarray,
        target_lengths: np.ndarray | None,
        training: bool = False,
        rng: Rng | None = None,
    ) -> Tensor:
        """First decoder hidden states for tokens ``ids`` fed at 1-based ``steps``."""
        cfg = self.config
        if cfg.length_mode.conditions_decoder and target_lengths is None:
            raise DataError(f"length mode {cfg.length_mode.value!r} needs target lengths")
        ids = self._word_dropout(ids, training, rng)
        positions = self.decoder_positions(steps, target_lengths)
        h = add(self._embed(ids), Tensor(self._positions[positions]))
        if cfg.length_mode is LengthMode.DECODER_EMBEDDING:
            remaining = self.remaining_lengths(steps, target_lengths)
            length_vectors = embedding_lookup(self._p("length.embedding"), remaining)
            h = relu(linear(concat_last_dim(h, length_vectors), self._p("length.proj.weight"), self._p("length.proj.bias")))
        return h

    def decoder_input(self, prev_token: int, j: int, target_length: int | None = None) -> np.ndarray:
        """Single decoder input vector for ``y_{j-1} = prev_token`` at step ``j``."""
        if j < 1:
            raise ValueError(f"decoder steps start at 1, got {j}")
        lengths = None if target_length is None else np.array([target_length])
        with no_grad(), precision(self.config.precision):
            h = self.decoder_inputs(np.array([[prev_token]]), np.array([[j]]), lengths)
        return h.data[0, 0].copy()

    def decode_logits(
        self,
        tgt_in: np.ndarray,
        memory: Tensor,
        source_bias: np.ndarray,
        target_lengths: np.ndarray | None,
        training: bool = False,
        rng: Rng | None = None,
    ) -> Tensor:
        """Logits (B, T, V) for teacher-forced decoder inputs ``tgt_in`` (B, T)."""
        cfg = self.config
        tgt_in = np.atleast_2d(np.asarray(tgt_in, dtype=np.int64))
        self._check_ids(tgt_in)
        batch, length = tgt_in.shape
        if length > cfg.max_seq_len + 1:
            raise DataError(f"decoder input of length {length} exceeds max_seq_len + 1 = {cfg.max_seq_len + 1}")
        with precision(cfg.precision):
            word_rng = rng.child("target") if rng is not None else None
            drop_rng = rng.child("decoder") if rng is not None else None
            steps = np.broadcast_to(np.arange(1, length + 1), (batch, length))
            x = dropout(self.decoder_inputs(tgt_in, steps, target_lengths, training, word_rng), cfg.dropout, drop_rng, training)
            causal = Tensor(np.triu(np.full((length, length), MASK_VALUE), k=1)[None, None])
            cross_bias = Tensor(source_bias)
            for i in range(cfg.n_layers):
                prefix = f"decoder.{i}"
                h = self._norm(x, f"{prefix}.norm1")
                x = add(x, dropout(self._attention(f"{prefix}.self_attn", h, h, causal), cfg.dropout, drop_rng, training))
                h = self._norm(x, f"{prefix}.norm2")
                x = add(x, dropout(self._attention(f"{prefix}.cross_attn", h, memory, cross_bias), cfg.dropout, drop_rng, training))
                h = self._norm(x, f"{prefix}.norm3")
                x = add(x, dropout(self._feed_forward(f"{prefix}.ffn", h), cfg.dropout, drop_rng, training))
            x = self._norm(x, "decoder.norm")
            return linear(x, self._p("output.weight"), self._p("output.bias"))

    def forward_logits(self, batch: Batch, training: bool = False, rng: Rng | None = None) -> Tensor:
        lengths = self._batch_lengths(batch)
        memory = self.encode(batch.src, training, rng)
        return self.decode_logits(batch.tgt_in, memory, self.source_bias(batch.src), lengths, training, rng)

    def forward_loss(self, batch: Batch, training: bool = False, rng: Rng | None = None) -> Tensor:
        """Mean token cross-entropy with teacher forcing; PAD targets are ignored."""
        logits = self.forward_logits(batch, training, rng)
        with precision(self.config.precision):
            return cross_entropy(logits, batch.tgt_out, ignore_index=PAD_ID)

    def _batch_lengths(self, batch: Batch) -> np.ndarray | None:
        if not self.config.length_mode.conditions_decoder:
            return None
        if batch.target_lengths is None:
            raise DataError(
                f"length mode {self.config.length_mode.value!r} needs a target length annotation on every example"
            )
        return np.asarray(batch.target_lengths, dtype=np.int64)

    def _check_ids(self, ids: np.ndarray) -> None:
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise DataError(f"token ids must lie in [0, {self.config.vocab_size}), got [{ids.min()}, {ids.max()}]")

    # ------------------------------------------------------------- decoding

    def start(self, src_ids: Sequence[int], target_length: int | None = None) -> DecoderState:
        """Encode one source sentence and return the state before the first token."""
        if self.config.length_mode.conditions_decoder and target_length is None:
            raise DataError(f"length mode {self.config.length_mode.value!r} needs a target length")
        with no_grad():
            memory = self.encode(np.asarray([list(src_ids)], dtype=np.int64))
        return DecoderState(
            memory=memory,
            source_bias=self.source_bias(np.asarray([list(src_ids)])),
            target_length=target_length,
            max_len_index=self.config.max_len_index,
        )

    def next_log_probs(self, state: DecoderState, prefixes: np.ndarray) -> np.ndarray:
        """Log-probabilities (K, V) of the next token after each row of ``prefixes`` (K, j-1)."""
        prefixes = np.asarray(prefixes, dtype=np.int64).reshape(len(prefixes), -1)
        tgt_in = np.concatenate([np.full((prefixes.shape[0], 1), BOS_ID, dtype=np.int64), prefixes], axis=1)
        lengths = None
        if self.config.length_mode.conditions_decoder:
            lengths = np.full(prefixes.shape[0], state.target_length, dtype=np.int64)
        with no_grad():
            logits = self.decode_logits(tgt_in, state.memory, state.source_bias, lengths)
            with precision(self.config.precision):
                out = log_softmax(Tensor(logits.data[:, -1, :]))
        return out.data.astype(np.float64)

    def decode_step(self, state: DecoderState) -> np.ndarray:
        """Log-probability distribution over the vocabulary for token ``y_j``."""
        return self.next_log_probs(state, np.asarray([state.prefix], dtype=np.int64))[0]


def average_checkpoints(checkpoints: Sequence[Mapping[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """Element-wise mean of parameter maps that share names and shapes."""
    if not checkpoints:
        raise CheckpointError("cannot average an empty list of checkpoints")
    reference = checkpoints[0]
    for index, other in enumerate(checkpoints[1:], start=1):
        if set(other) != set(reference):
            raise CheckpointError(f"checkpoint {index} has different parameter names than checkpoint 0")
        for name, value in other.items():
            if np.shape(value) != np.shape(reference[name]):
                raise CheckpointError(
                    f"checkpoint {index}: parameter {name!r} has shape {np.shape(value)}, "
                    f"expected {np.shape(reference[name])}"
                )
    averaged = {}
    for name, value in reference.items():
        total = np.zeros(np.shape(value), dtype=np.float64)
        for checkpoint in checkpoints:
            total += np.asarray(checkpoint[name], dtype=np.float64)
        averaged[name] = (total / len(checkpoints)).astype(np.asarray(value).dtype)
    return averaged
