"""
Dense tensors with reverse-mode automatic differentiation
=========================================================

A deliberately small numpy-backed engine: enough operations to train and run a
transformer encoder-decoder, an Adam optimizer with the warmup /
inverse-square-root schedule, a seeded PCG64 random stream, and a central
finite-difference gradient checker.

Precision is thread-local and defaults to 32-bit; switch to 64-bit with
``with precision("float64"):`` for gradient verification. Gradient recording
is also thread-local (``no_grad``), so concurrent decodes never share a tape.
"""

from __future__ import annotations

import contextlib
import logging
import math
import threading
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import AutogradError, NumericsError, ShapeError

logger = logging.getLogger(__name__)

PRECISIONS = {"float32": np.float32, "float64": np.float64}

_local = threading.local()


def default_dtype() -> type:
    return getattr(_local, "dtype", np.float32)


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Set the floating point type of newly created tensors in this thread."""
    if name not in PRECISIONS:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(PRECISIONS)}")
    previous = default_dtype()
    _local.dtype = PRECISIONS[name]
    try:
        yield
    finally:
        _local.dtype = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them for ``backward``."""
    previous = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


# =============================================================================
# Tensor
# =============================================================================

class Tensor:
    """Row-major float buffer with an optional gradient.

    Leaf tensors (parameters, inputs) accumulate ``grad`` across ``backward``
    calls until ``zero_grad``. Intermediate tensors only keep the closure that
    maps their output gradient to gradients of their parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_released")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        array = np.array(data, dtype=dtype or default_dtype(), copy=True)
        if array.size == 0:
            raise ShapeError(f"empty tensor rejected (shape {array.shape})")
        self.data = array
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self._released = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._released = False
    needs_grad = grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs_grad
    if needs_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# =============================================================================
# Operations
# =============================================================================

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    """Element-wise product with broadcasting."""
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    x = _wrap(x)
    factor = float(factor)

    def backward(g):
        return (g * factor,)

    return _result(x.data * x.data.dtype.type(factor), (x,), backward)


def relu(x: Tensor) -> Tensor:
    x = _wrap(x)
    positive = x.data > 0

    def backward(g):
        return (g * positive,)

    return _result(np.where(positive, x.data, 0).astype(x.data.dtype), (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    x = _wrap(x)

    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

    return _result(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (numpy broadcasting rules)."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner dimensions differ ({a.shape[-1]} vs {b.shape[-2]}) for {a.shape} @ {b.shape}"
        )
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _result(a.data @ b.data, (a, b), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _wrap(x)
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} into {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(x.shape),)

    return _result(data, (x,), backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = _wrap(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeError(f"transpose axes {axes} invalid for rank {x.data.ndim}")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _result(np.transpose(x.data, axes), (x,), backward)


def concat_last_dim(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_last_dim: leading dimensions differ, {a.shape} vs {b.shape}")
    split = a.shape[-1]

    def backward(g):
        return g[..., :split], g[..., split:]

    return _result(np.concatenate([a.data, b.data], axis=-1), (a, b), backward)


def _softmax_array(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_array(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = _wrap(x)
    y = _softmax_array(x.data)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the last axis."""
    x = _wrap(x)
    y = _log_softmax_array(x.data)

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _result(y, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then apply gain and bias."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} must be ({width},)")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        grad_gain = (g * x_hat).sum(axis=lead)
        grad_bias = g.sum(axis=lead)
        d_hat = g * gain.data
        grad_x = inv_std * (
            d_hat
            - d_hat.mean(axis=-1, keepdims=True)
            - x_hat * (d_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        return grad_x, grad_gain, grad_bias

    out = (x_hat * gain.data + bias.data).astype(x.data.dtype)
    return _result(out, (x, gain, bias), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by integer ``ids`` (any shape)."""
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding ids must lie in [0, {table.shape[0]}), got [{ids.min()}, {ids.max()}]")

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (grad,)

    return _result(table.data[ids], (table,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` of shape (in, out)."""
    x, weight = _wrap(x), _wrap(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} does not match weight {weight.shape}")
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def dropout(x: Tensor, p: float, rng: "Rng | None", training: bool) -> Tensor:
    """Inverted dropout; the identity outside training or for ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an Rng")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / x.data.dtype.type(1.0 - p)
    return mul(x, Tensor(keep, dtype=x.data.dtype))


def cross_entropy(logits: Tensor, targets, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under softmax(``logits``).

    Positions whose target equals ``ignore_index`` contribute neither to the
    mean nor to the gradient.
    """
    logits = _wrap(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} do not match targets {targets.shape}")
    vocab = logits.shape[-1]
    flat_logits = logits.data.reshape(-1, vocab)
    flat_targets = targets.reshape(-1)
    valid = np.ones_like(flat_targets, dtype=bool) if ignore_index is None else flat_targets != ignore_index
    count = int(valid.sum())
    if count == 0:
        raise ShapeError("cross_entropy: every target position is ignored")
    if flat_targets[valid].min() < 0 or flat_targets[valid].max() >= vocab:
        raise ShapeError(f"cross_entropy: target ids outside [0, {vocab})")
    rows = np.flatnonzero(valid)
    log_probs = _log_softmax_array(flat_logits)
    loss = -log_probs[rows, flat_targets[rows]].sum() / count

    def backward(g):
        grad = np.exp(log_probs)
        grad[rows, flat_targets[rows]] -= 1.0
        grad[~valid] = 0.0
        grad *= g / count
        return (grad.reshape(logits.shape),)

    return _result(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward)


# =============================================================================
# Reverse mode
# =============================================================================

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf reachable from the scalar ``loss``.

    The graph is released afterwards; a second call on the same loss raises.
    """
    if loss._released:
        raise AutogradError("backward() called twice on the same graph; recompute the loss first")
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise AutogradError("loss is not connected to any tensor with requires_grad=True")

    order = _topological_order(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                g = np.asarray(g, dtype=node.data.dtype).reshape(node.shape)
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = parent_grad if key not in pending else pending[key] + parent_grad
        node._parents = ()
        node._backward = None
    loss.grad = np.ones_like(loss.data)
    loss._released = True


def zero_grad(params: Mapping[str, Tensor]) -> None:
    for tensor in params.values():
        tensor.grad = None


def gradient_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    samples_per_input: int | None = None,
    rng: "Rng | None" = None,
    floor: float = 1e-4,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn`` must rebuild its graph on every call. The relative error uses
    ``max(|analytic|, |numeric|, floor)`` as denominator so that vanishing
    gradients compare absolutely.
    """
    for tensor in inputs:
        tensor.grad = None
    backward(fn(*inputs))
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    with no_grad():
        for tensor, grad in zip(inputs, analytic):
            positions = np.arange(tensor.data.size)
            if samples_per_input is not None and samples_per_input < positions.size:
                if rng is None:
                    raise ValueError("sampling positions needs an Rng")
                positions = rng.permutation(positions.size)[:samples_per_input]
            for flat in positions:
                index = np.unravel_index(int(flat), tensor.shape)
                original = tensor.data[index]
                tensor.data[index] = original + eps
                plus = float(fn(*inputs).data)
                tensor.data[index] = original - eps
                minus = float(fn(*inputs).data)
                tensor.data[index] = original
                numeric = (plus - minus) / (2.0 * eps)
                exact = float(grad[index])
                error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
                worst = max(worst, error)
    return worst


# =============================================================================
# Random streams
# =============================================================================

class Rng:
    """Seeded PCG64 stream with named, order-independent child streams.

    ``Rng(seed).child("init")`` always yields the same draws no matter how many
    other children were created or consumed before it.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int, path: Sequence[str] = ()):
        if int(seed) < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.path = tuple(path)
        spawn_key = tuple(zlib.crc32(part.encode("utf-8")) for part in self.path)
        sequence = np.random.SeedSequence(self.seed, spawn_key=spawn_key)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def child(self, name: str) -> "Rng":
        return Rng(self.seed, self.path + (str(name),))

    def random(self, shape=None) -> np.ndarray:
        return self.generator.random(shape)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self.generator.uniform(low, high, shape)

    def normal(self, mean: float, std: float, shape=None) -> np.ndarray:
        return self.generator.normal(mean, std, shape)

    def integers(self, low: int, high: int, shape=None):
        return self.generator.integers(low, high, shape)

    def binomial(self, n: int, p: float) -> int:
        return int(self.generator.binomial(n, p))

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def state(self) -> dict:
        return self.generator.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.generator.bit_generator.state = state

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={'/'.join(self.path) or '<root>'})"


# =============================================================================
# Optimizer
# =============================================================================

@dataclass
class AdamConfig:
    """Adam hyperparameters with the warmup / inverse-square-root schedule.

    The rate rises linearly to ``lr`` over ``warmup_steps`` and then decays
    as ``lr * sqrt(warmup_steps / step)``.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    warmup_steps: int = 400

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.warmup_steps < 1:
            raise ValueError(f"warmup_steps must be >= 1, got {self.warmup_steps}")

    def learning_rate(self, step: int) -> float:
        if step < 1:
            raise ValueError(f"schedule is defined for step >= 1, got {step}")
        return self.lr * min(step / self.warmup_steps, math.sqrt(self.warmup_steps / step))


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray] | None,
    state: AdamState,
    config: AdamConfig,
) -> float:
    """Apply one Adam update in place and return the learning rate used.

    ``grads`` defaults to each parameter's ``grad``; parameters without a
    gradient are skipped. Nothing is modified if any gradient is non-finite.
    """
    if grads is None:
        grads = {name: p.grad for name, p in params.items() if p.grad is not None}
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericsError(
                f"non-finite gradient for parameter {name!r} at step {state.step + 1}; aborting update"
            )

    state.step += 1
    t = state.step
    lr = config.learning_rate(t)
    correction1 = 1.0 - config.beta1 ** t
    correction2 = 1.0 - config.beta2 ** t
    for name, g in grads.items():
        param = params[name]
        g = g.astype(np.float64)
        m = state.m.setdefault(name, np.zeros(param.shape, dtype=np.float64))
        v = state.v.setdefault(name, np.zeros(param.shape, dtype=np.float64))
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + config.eps)
        param.data -= update.astype(param.data.dtype)
    return lr
