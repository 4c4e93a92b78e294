"""Tests for the autodiff engine, random streams and the Adam optimizer."""

import numpy as np
import pytest

from lcmt.data import collate, make_example, annotate_length
from lcmt.errors import AutogradError, NumericsError, ShapeError
from lcmt.model import ModelConfig, TransformerModel
from lcmt.numerics import (
    AdamConfig,
    AdamState,
    Rng,
    Tensor,
    adam_step,
    add,
    backward,
    concat_last_dim,
    cross_entropy,
    default_dtype,
    dropout,
    embedding_lookup,
    gradient_check,
    layer_norm,
    linear,
    log_softmax,
    matmul,
    mul,
    no_grad,
    precision,
    relu,
    reshape,
    scale,
    softmax,
    sum_all,
    transpose,
)


def _param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _weighted_sum(y: Tensor, weights: np.ndarray) -> Tensor:
    return sum_all(mul(y, Tensor(weights)))


class TestForwardOps:
    def test_softmax_of_equal_logits_is_uniform(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_relu(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])

    def test_softmax_rows_sum_to_one(self, np_rng):
        x = Tensor(np_rng.normal(scale=5.0, size=(6, 11)))
        np.testing.assert_allclose(softmax(x).data.sum(axis=-1), 1.0, atol=1e-6)

    def test_log_softmax_is_log_of_softmax(self, np_rng):
        x = Tensor(np_rng.normal(scale=3.0, size=(4, 9)))
        np.testing.assert_allclose(log_softmax(x).data, np.log(softmax(x).data), atol=1e-5)

    def test_softmax_is_stable_for_large_logits(self):
        out = softmax(Tensor([1000.0, 1000.0, -1000.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [0.5, 0.5, 0.0], atol=1e-7)

    def test_default_precision_is_float32(self):
        assert default_dtype() is np.float32
        assert Tensor([1.0]).dtype == np.float32

    def test_precision_context_switches_and_restores(self):
        with precision("float64"):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32

    def test_unknown_precision_rejected(self):
        with pytest.raises(ValueError):
            with precision("float16"):
                pass

    def test_empty_tensor_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((0, 3)))

    def test_matmul_inner_dimension_mismatch(self):
        with pytest.raises(ShapeError, match="inner dimensions"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_add_shapes_must_broadcast(self):
        with pytest.raises(ShapeError):
            add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))

    def test_cross_entropy_ignores_padding(self):
        logits = Tensor(np.log([[[0.5, 0.25, 0.25], [0.1, 0.8, 0.1]]]))
        loss = cross_entropy(logits, [[0, 0]], ignore_index=None).item()
        np.testing.assert_allclose(loss, -(np.log(0.5) + np.log(0.1)) / 2, rtol=1e-5)
        only_first = cross_entropy(logits, [[1, 0]], ignore_index=0).item()
        np.testing.assert_allclose(only_first, -np.log(0.25), rtol=1e-5)

    def test_cross_entropy_all_ignored(self):
        with pytest.raises(ShapeError):
            cross_entropy(Tensor(np.zeros((1, 2, 3))), [[0, 0]], ignore_index=0)


class TestDropout:
    def test_identity_outside_training(self, np_rng):
        x = Tensor(np_rng.normal(size=(3, 4)))
        assert dropout(x, 0.5, None, training=False) is x

    def test_zero_probability_is_identity(self):
        x = Tensor(np.ones(5))
        assert dropout(x, 0.0, Rng(0), training=True) is x

    def test_kept_values_are_rescaled(self):
        x = Tensor(np.ones((50, 50)))
        out = dropout(x, 0.25, Rng(3), training=True).data
        kept = out[out != 0]
        np.testing.assert_allclose(kept, 1 / 0.75, rtol=1e-6)
        assert 0.6 < (out > 0).mean() < 0.9

    def test_invalid_probability(self):
        with pytest.raises(ValueError):
            dropout(Tensor([1.0]), 1.0, Rng(0), training=True)

    def test_training_needs_rng(self):
        with pytest.raises(ValueError):
            dropout(Tensor([1.0]), 0.5, None, training=True)


class TestGradients:
    """Analytic gradients against central finite differences in 64-bit mode."""

    def test_matmul(self, np_rng):
        with precision("float64"):
            a, b = _param(np_rng, 2, 3), _param(np_rng, 3, 4)
            assert gradient_check(lambda a, b: sum_all(matmul(a, b)), [a, b]) < 1e-4

    def test_batched_matmul_broadcasting(self, np_rng):
        with precision("float64"):
            a, b = _param(np_rng, 2, 3, 4), _param(np_rng, 4, 5)
            w = np_rng.normal(size=(2, 3, 5))
            assert gradient_check(lambda a, b: _weighted_sum(matmul(a, b), w), [a, b]) < 1e-4

    def test_layer_norm(self, np_rng):
        with precision("float64"):
            x, gain, bias = _param(np_rng, 3, 6), _param(np_rng, 6), _param(np_rng, 6)
            w = np_rng.normal(size=(3, 6))
            assert gradient_check(lambda x, g, b: _weighted_sum(layer_norm(x, g, b), w), [x, gain, bias]) < 1e-4

    def test_softmax_and_log_softmax(self, np_rng):
        with precision("float64"):
            x = _param(np_rng, 4, 7)
            w = np_rng.normal(size=(4, 7))
            assert gradient_check(lambda x: _weighted_sum(softmax(x), w), [x]) < 1e-4
            assert gradient_check(lambda x: _weighted_sum(log_softmax(x), w), [x]) < 1e-4

    def test_shape_ops(self, np_rng):
        with precision("float64"):
            a, b = _param(np_rng, 2, 3, 4), _param(np_rng, 2, 3, 2)
            w = np_rng.normal(size=(3, 2, 6))

            def fn(a, b):
                joined = concat_last_dim(a, b)
                return _weighted_sum(transpose(reshape(joined, (2, 3, 6)), (1, 0, 2)), w)

            assert gradient_check(fn, [a, b]) < 1e-4

    def test_embedding_lookup_with_repeated_ids(self, np_rng):
        with precision("float64"):
            table = _param(np_rng, 5, 3)
            ids = np.array([[0, 2, 2], [4, 0, 1]])
            w = np_rng.normal(size=(2, 3, 3))
            assert gradient_check(lambda t: _weighted_sum(embedding_lookup(t, ids), w), [table]) < 1e-4

    def test_linear_relu_scale(self, np_rng):
        with precision("float64"):
            x, weight, bias = _param(np_rng, 4, 3), _param(np_rng, 3, 5), _param(np_rng, 5)
            w = np_rng.normal(size=(4, 5))
            fn = lambda x, W, b: _weighted_sum(scale(relu(linear(x, W, b)), 0.5), w)  # noqa: E731
            assert gradient_check(fn, [x, weight, bias]) < 1e-4

    def test_cross_entropy_with_ignored_positions(self, np_rng):
        with precision("float64"):
            logits = _param(np_rng, 2, 3, 6)
            targets = np.array([[1, 0, 5], [0, 3, 2]])
            assert gradient_check(lambda z: cross_entropy(z, targets, ignore_index=0), [logits]) < 1e-4
            logits.grad = None
            backward(cross_entropy(logits, targets, ignore_index=0))
            np.testing.assert_array_equal(logits.grad[0, 1], 0.0)
            np.testing.assert_array_equal(logits.grad[1, 0], 0.0)

    def test_randomized_instances(self):
        """Randomized compositions of every differentiable op."""
        for seed in range(100):
            rng = np.random.default_rng(seed)
            with precision("float64"):
                x, W = _param(rng, 3, 4), _param(rng, 4, 4)
                gain, bias = _param(rng, 4), _param(rng, 4)
                w = rng.normal(size=(3, 4))

                def fn(x, W, g, b):
                    h = layer_norm(add(matmul(x, W), x), g, b)
                    return _weighted_sum(log_softmax(mul(softmax(h), h)), w)

                assert gradient_check(fn, [x, W, gain, bias]) < 1e-4, f"seed {seed}"

    def test_transformer_loss(self, pivot_vocab):
        """Gradient of a full one-layer transformer loss, sampled on five entries per tensor."""
        config = ModelConfig(
            vocab_size=len(pivot_vocab),
            n_layers=1,
            d_model=8,
            d_ff=16,
            n_heads=2,
            dropout=0.0,
            word_dropout=0.0,
            max_seq_len=12,
            max_len_index=16,
            length_mode="decoder_embedding",
            precision="float64",
            n_reserved=pivot_vocab.n_reserved,
        )
        with precision("float64"):
            model = TransformerModel(config, Rng(5))
            examples = [
                annotate_length(make_example(["l1_01", "l1_02", "l1_03"], ["u02", "t03@@", "t03"], pivot_vocab)),
                annotate_length(make_example(["l1_04", "l1_05"], ["t05@@", "t05"], pivot_vocab)),
            ]
            batch = collate(examples)
            names = ["embed.tokens", "decoder.0.cross_attn.q.weight", "encoder.0.ffn.in.weight", "length.embedding", "output.weight"]
            inputs = [model.parameters[name] for name in names]
            error = gradient_check(lambda *_: model.forward_loss(batch), inputs, samples_per_input=5, rng=Rng(11))
        assert error < 1e-3


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward(sum_all(mul(x, x)))
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_gradients_accumulate_until_zeroed(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(sum_all(x))
        backward(sum_all(scale(x, 2.0)))
        np.testing.assert_allclose(x.grad, [3.0, 3.0])
        x.zero_grad()
        assert x.grad is None

    def test_shared_subexpression(self):
        x = Tensor([3.0], requires_grad=True)
        y = mul(x, x)
        backward(sum_all(add(y, y)))
        np.testing.assert_allclose(x.grad, [12.0])

    def test_second_backward_raises(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = sum_all(mul(x, x))
        backward(loss)
        with pytest.raises(AutogradError):
            backward(loss)

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError):
            backward(mul(x, x))

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with no_grad():
            y = sum_all(mul(x, x))
        assert not y.requires_grad
        with pytest.raises(AutogradError):
            backward(y)

    def test_deep_chain_is_iterative(self):
        x = Tensor([1.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = add(y, 0.0)
        backward(sum_all(y))
        np.testing.assert_allclose(x.grad, [1.0])


class TestRng:
    def test_same_seed_same_draws(self):
        np.testing.assert_array_equal(Rng(9).random(10), Rng(9).random(10))

    def test_child_streams_are_order_independent(self):
        root = Rng(9)
        root.child("a").random(100)
        after = root.child("b").random(5)
        np.testing.assert_array_equal(after, Rng(9).child("b").random(5))

    def test_named_children_differ(self):
        assert not np.array_equal(Rng(9).child("a").random(5), Rng(9).child("b").random(5))
        assert not np.array_equal(Rng(9).child("a").random(5), Rng(10).child("a").random(5))

    def test_nested_path(self):
        assert Rng(1).child("x").child("y").path == ("x", "y")

    def test_state_round_trip(self):
        rng = Rng(4)
        rng.random(3)
        saved = rng.state()
        first = rng.random(4)
        rng.set_state(saved)
        np.testing.assert_array_equal(rng.random(4), first)

    def test_binomial_returns_int(self):
        value = Rng(2).binomial(5, 0.5)
        assert isinstance(value, int) and 0 <= value <= 5

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            Rng(-1)


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        w = Tensor([1.0], requires_grad=True, dtype=np.float64)
        config = AdamConfig(lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8, warmup_steps=1)
        adam_step({"w": w}, {"w": np.array([1.0])}, AdamState(), config)
        np.testing.assert_allclose(w.data, [0.9], atol=1e-6)

    def test_zero_gradient_leaves_parameter(self):
        w = Tensor([1.5, -2.0], requires_grad=True, dtype=np.float64)
        adam_step({"w": w}, {"w": np.zeros(2)}, AdamState(), AdamConfig(warmup_steps=1))
        np.testing.assert_array_equal(w.data, [1.5, -2.0])

    def test_quadratic_bowl_decreases_monotonically(self):
        w = Tensor([3.0, -2.0], requires_grad=True, dtype=np.float64)
        state, config = AdamState(), AdamConfig(lr=0.05, warmup_steps=1)
        losses = []
        for _ in range(10):
            w.zero_grad()
            loss = sum_all(mul(w, w))
            losses.append(loss.item())
            backward(loss)
            adam_step({"w": w}, None, state, config)
        assert all(b < a for a, b in zip(losses, losses[1:]))
        assert state.step == 10

    def test_non_finite_gradient_aborts_before_update(self):
        w = Tensor([1.0, 1.0], requires_grad=True, dtype=np.float64)
        v = Tensor([1.0], requires_grad=True, dtype=np.float64)
        state = AdamState()
        with pytest.raises(NumericsError):
            adam_step({"v": v, "w": w}, {"v": np.array([1.0]), "w": np.array([np.nan, 0.0])}, state, AdamConfig())
        np.testing.assert_array_equal(v.data, [1.0])
        assert state.step == 0

    def test_gradient_shape_mismatch(self):
        w = Tensor([1.0, 1.0], requires_grad=True)
        with pytest.raises(ShapeError):
            adam_step({"w": w}, {"w": np.ones(3)}, AdamState(), AdamConfig())

    def test_warmup_schedule(self):
        config = AdamConfig(lr=1.0, warmup_steps=4)
        assert config.learning_rate(1) == pytest.approx(0.25)
        assert config.learning_rate(4) == pytest.approx(1.0)
        assert config.learning_rate(16) == pytest.approx(0.5)
        with pytest.raises(ValueError):
            config.learning_rate(0)
