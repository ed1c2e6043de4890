import numpy as np
import pytest

from fabmatch.numcore import (
    Encoder,
    EncoderSpec,
    adam_init,
    adam_step,
    encoder_backward,
    encoder_backward_batch,
    encoder_forward,
    encoder_forward_batch,
    encoder_init,
    finite_diff_arrays,
    finite_diff_grad,
)


class TestEncoderSpec:
    def test_rejects_short_and_invalid_dims(self):
        with pytest.raises(ValueError):
            EncoderSpec((4,))
        with pytest.raises(ValueError):
            EncoderSpec((4, 0))
        with pytest.raises(ValueError):
            EncoderSpec((4, -1, 2))

    def test_dims(self):
        spec = EncoderSpec((4, 8, 2))
        assert spec.input_dim == 4 and spec.output_dim == 2 and spec.n_layers == 2


class TestEncoderInit:
    def test_deterministic_for_fixed_seed(self):
        spec = EncoderSpec((4, 3, 2))
        a = encoder_init(spec, 7)
        b = encoder_init(spec, 7)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(a.biases, b.biases):
            assert np.array_equal(ba, bb)

    def test_shapes_and_zero_bias(self):
        enc = encoder_init(EncoderSpec((4, 2)), 7)
        assert enc.weights[0].shape == (2, 4)
        assert enc.biases[0].shape == (2,)
        assert np.all(enc.biases[0] == 0.0)

    def test_different_seeds_differ(self):
        spec = EncoderSpec((4, 2))
        a = encoder_init(spec, 7)
        b = encoder_init(spec, 8)
        assert not np.array_equal(a.weights[0], b.weights[0])

    def test_wrong_shapes_rejected_by_constructor(self):
        spec = EncoderSpec((4, 2))
        with pytest.raises(ValueError):
            Encoder(spec, [np.zeros((3, 4))], [np.zeros(3)])
        with pytest.raises(ValueError):
            Encoder(spec, [np.full((2, 4), np.nan)], [np.zeros(2)])


class TestForward:
    def test_zero_parameters_give_zero_embedding(self):
        spec = EncoderSpec((3, 5, 2))
        enc = Encoder(spec, [np.zeros((5, 3)), np.zeros((2, 5))], [np.zeros(5), np.zeros(2)])
        emb, _ = encoder_forward(enc, np.array([1.0, -2.0, 3.0]))
        assert np.array_equal(emb, np.zeros(2))

    def test_single_identity_layer_is_identity(self):
        spec = EncoderSpec((2, 2))
        enc = Encoder(spec, [np.eye(2)], [np.zeros(2)])
        emb, _ = encoder_forward(enc, np.array([1.0, -2.0]))
        assert np.array_equal(emb, np.array([1.0, -2.0]))

    def test_two_layer_forward_matches_hand_computation(self):
        # independent oracle: explicit matrix arithmetic on the same weights
        enc = encoder_init(EncoderSpec((4, 3, 2)), 42)
        x = np.array([0.5, -1.0, 2.0, 0.25])
        w1, w2 = enc.weights
        b1, b2 = enc.biases
        hidden = np.maximum(w1 @ x + b1, 0.0)
        expected = w2 @ hidden + b2
        emb, _ = encoder_forward(enc, x)
        np.testing.assert_allclose(emb, expected, rtol=1e-14)

    def test_dimension_mismatch_rejected(self):
        enc = encoder_init(EncoderSpec((4, 2)), 0)
        with pytest.raises(ValueError):
            encoder_forward(enc, np.zeros(5))

    def test_determinism_bitwise(self):
        enc = encoder_init(EncoderSpec((6, 4, 3)), 9)
        x = np.random.default_rng(1).normal(size=6)
        a, _ = encoder_forward(enc, x)
        b, _ = encoder_forward(enc, x)
        assert np.array_equal(a, b)


class TestBackward:
    def test_zero_grad_output_gives_zero_gradients(self):
        enc = encoder_init(EncoderSpec((4, 3, 2)), 0)
        _, cache = encoder_forward(enc, np.ones(4))
        grads = encoder_backward(enc, cache, np.zeros(2))
        assert all(np.all(g == 0) for g in grads.d_weights)
        assert all(np.all(g == 0) for g in grads.d_biases)
        assert np.all(grads.d_input == 0)

    def test_single_linear_layer_outer_product(self):
        enc = encoder_init(EncoderSpec((3, 2)), 1)
        x = np.array([1.0, 2.0, -1.5])
        g = np.array([0.5, -2.0])
        _, cache = encoder_forward(enc, x)
        grads = encoder_backward(enc, cache, g)
        np.testing.assert_allclose(grads.d_weights[0], np.outer(g, x), rtol=1e-14)
        np.testing.assert_allclose(grads.d_biases[0], g, rtol=1e-14)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        enc = encoder_init(EncoderSpec((5, 4, 3)), seed)
        x = rng.normal(size=5)
        target = rng.normal(size=3)

        def loss(e):
            emb, _ = encoder_forward(e, x)
            return 0.5 * float(np.sum((emb - target) ** 2))

        emb, cache = encoder_forward(enc, x)
        grads = encoder_backward(enc, cache, emb - target)
        fd = finite_diff_grad(loss, enc, eps=1e-5)
        analytic = np.concatenate([g.ravel() for g in grads.parameter_arrays()])
        numeric = np.concatenate([g.ravel() for g in fd.parameter_arrays()])
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
        assert rel <= 1e-4

    def test_grad_shape_mismatch_rejected(self):
        enc = encoder_init(EncoderSpec((4, 2)), 0)
        _, cache = encoder_forward(enc, np.zeros(4))
        with pytest.raises(ValueError):
            encoder_backward(enc, cache, np.zeros(3))

    def test_cache_from_other_spec_rejected(self):
        enc_a = encoder_init(EncoderSpec((4, 2)), 0)
        enc_b = encoder_init(EncoderSpec((4, 3, 2)), 0)
        _, cache = encoder_forward(enc_b, np.zeros(4))
        with pytest.raises(ValueError):
            encoder_backward(enc_a, cache, np.zeros(2))

    def test_batch_backward_equals_sum_of_singles(self):
        rng = np.random.default_rng(5)
        enc = encoder_init(EncoderSpec((4, 3, 2)), 5)
        xs = rng.normal(size=(6, 4))
        gs = rng.normal(size=(6, 2))
        _, cache = encoder_forward_batch(enc, xs)
        batch = encoder_backward_batch(enc, cache, gs)
        total_w = [np.zeros_like(w) for w in enc.weights]
        for i in range(6):
            _, c = encoder_forward(enc, xs[i])
            g = encoder_backward(enc, c, gs[i])
            for acc, dw in zip(total_w, g.d_weights):
                acc += dw
        for got, want in zip(batch.d_weights, total_w):
            np.testing.assert_allclose(got, want, rtol=1e-12)


class TestFiniteDiff:
    def test_quadratic_gradient(self):
        w = [np.array([3.0])]
        grads = finite_diff_arrays(lambda: 0.5 * float(w[0][0] ** 2), w, eps=1e-5)
        assert grads[0][0] == pytest.approx(3.0, abs=1e-6)

    def test_constant_loss_zero_gradient(self):
        enc = encoder_init(EncoderSpec((3, 2)), 0)
        fd = finite_diff_grad(lambda e: 1.25, enc)
        assert all(np.all(g == 0) for g in fd.parameter_arrays())

    def test_three_layer_cross_check(self):
        rng = np.random.default_rng(2)
        enc = encoder_init(EncoderSpec((4, 5, 4, 3)), 2)
        x = rng.normal(size=4)

        def loss(e):
            emb, _ = encoder_forward(e, x)
            return float(np.sum(emb**2))

        emb, cache = encoder_forward(enc, x)
        grads = encoder_backward(enc, cache, 2.0 * emb)
        fd = finite_diff_grad(loss, enc, eps=1e-5)
        analytic = np.concatenate([g.ravel() for g in grads.parameter_arrays()])
        numeric = np.concatenate([g.ravel() for g in fd.parameter_arrays()])
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
        assert rel <= 1e-4

    def test_non_finite_loss_rejected(self):
        enc = encoder_init(EncoderSpec((2, 2)), 0)
        with pytest.raises(ValueError):
            finite_diff_grad(lambda e: float("nan"), enc)

    def test_bad_eps_rejected(self):
        with pytest.raises(ValueError):
            finite_diff_arrays(lambda: 0.0, [np.zeros(1)], eps=0.0)


class TestAdam:
    def test_zero_grads_leave_params_unchanged(self):
        params = [np.array([1.0, -2.0]), np.array([[3.0]])]
        state = adam_init(params)
        new, state = adam_step(params, [np.zeros(2), np.zeros((1, 1))], state)
        assert np.array_equal(new[0], params[0])
        assert np.array_equal(new[1], params[1])
        assert state.step_count == 1

    def test_first_step_closed_form(self):
        params = [np.array([1.0])]
        state = adam_init(params, learning_rate=0.001)
        new, _ = adam_step(params, [np.array([2.0])], state)
        assert new[0][0] == pytest.approx(1.0 - 0.001 * (2.0 / (2.0 + 1e-8)), abs=1e-15)

    def test_converges_on_quadratic(self):
        params = [np.array([0.0])]
        state = adam_init(params, learning_rate=0.1)
        for _ in range(200):
            params, state = adam_step(params, [2.0 * (params[0] - 5.0)], state)
        assert abs(params[0][0] - 5.0) <= 1e-2

    def test_shape_mismatch_rejected(self):
        params = [np.zeros(2)]
        state = adam_init(params)
        with pytest.raises(ValueError):
            adam_step(params, [np.zeros(3)], state)

    def test_step_count_increments_by_one(self):
        params = [np.zeros(2)]
        state = adam_init(params)
        for expected in (1, 2, 3):
            params, state = adam_step(params, [np.ones(2)], state)
            assert state.step_count == expected
