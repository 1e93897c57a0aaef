"""Tests for the dense-layer engine: forward/backward maps, softmax, loss and Adam."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.errors import DimensionError, NumericalError
from src.nncore import (
    ActivationKind,
    AdamState,
    ClampCounter,
    ParameterBlock,
    accumulate_tied_gradients,
    adam_step,
    blocks_from_dict,
    blocks_to_dict,
    cross_entropy,
    dense_backward,
    dense_forward,
    glorot_init,
    layer_sizes,
    softmax,
    softmax_cross_entropy_grad,
)


@pytest.fixture
def block():
    return ParameterBlock(np.array([[0.5, -1.0, 0.25], [1.5, 0.0, -0.5]]), np.array([0.1, -0.2]))


class TestActivations:
    def test_relu_derivative_at_zero_is_zero(self):
        z = np.array([-1.0, 0.0, 2.0])
        np.testing.assert_array_equal(ActivationKind.RELU.derivative(z), [0.0, 0.0, 1.0])

    def test_tanh_derivative(self):
        z = np.array([0.0, 0.7])
        np.testing.assert_allclose(ActivationKind.TANH.derivative(z), 1.0 - np.tanh(z) ** 2)

    def test_identity(self):
        z = np.array([-3.0, 4.0])
        np.testing.assert_array_equal(ActivationKind.IDENTITY.apply(z), z)


class TestDenseLayer:
    def test_forward_matches_affine_map(self, block):
        x = np.array([1.0, 2.0, -1.0])
        y, _ = dense_forward(x, block, ActivationKind.IDENTITY)
        np.testing.assert_allclose(y, block.weights @ x + block.bias)
        assert y.shape == (2,)

    def test_batch_rows_match_single_calls(self, block):
        X = np.array([[1.0, 2.0, -1.0], [0.3, -0.4, 0.9]])
        batch, _ = dense_forward(X, block, ActivationKind.TANH)
        for i in range(2):
            single, _ = dense_forward(X[i], block, ActivationKind.TANH)
            np.testing.assert_allclose(batch[i], single)

    def test_input_width_mismatch(self, block):
        with pytest.raises(DimensionError):
            dense_forward(np.ones(4), block, ActivationKind.RELU)

    @pytest.mark.parametrize('activation', [ActivationKind.TANH, ActivationKind.IDENTITY])
    def test_backward_matches_finite_differences(self, block, activation):
        x = np.array([0.4, -0.3, 0.8])
        upstream = np.array([1.0, -2.0])

        def scalar(weights, bias, inputs):
            y, _ = dense_forward(inputs, ParameterBlock(weights, bias), activation)
            return float(upstream @ y)

        _, cache = dense_forward(x, block, activation)
        dW, db, dx = dense_backward(cache, upstream)

        eps = 1e-6
        num_dW = np.zeros_like(block.weights)
        for i in range(block.weights.shape[0]):
            for j in range(block.weights.shape[1]):
                plus, minus = block.weights.copy(), block.weights.copy()
                plus[i, j] += eps
                minus[i, j] -= eps
                num_dW[i, j] = (scalar(plus, block.bias, x) - scalar(minus, block.bias, x)) / (2 * eps)
        num_dx = np.array([
            (scalar(block.weights, block.bias, x + eps * e) - scalar(block.weights, block.bias, x - eps * e))
            / (2 * eps)
            for e in np.eye(3)
        ])
        num_db = np.array([
            (scalar(block.weights, block.bias + eps * e, x) - scalar(block.weights, block.bias - eps * e, x))
            / (2 * eps)
            for e in np.eye(2)
        ])
        np.testing.assert_allclose(dW, num_dW, atol=1e-6)
        np.testing.assert_allclose(db, num_db, atol=1e-6)
        np.testing.assert_allclose(dx, num_dx, atol=1e-6)

    def test_batched_weight_gradients_are_summed(self, block):
        X = np.array([[0.4, -0.3, 0.8], [1.0, 0.2, -0.6]])
        up = np.array([[1.0, 0.5], [-0.5, 2.0]])
        _, cache = dense_forward(X, block, ActivationKind.TANH)
        dW, db, dx = dense_backward(cache, up)
        total_W = np.zeros_like(dW)
        total_b = np.zeros_like(db)
        for i in range(2):
            _, c = dense_forward(X[i], block, ActivationKind.TANH)
            w, b, x_grad = dense_backward(c, up[i])
            total_W += w
            total_b += b
            np.testing.assert_allclose(dx[i], x_grad)
        np.testing.assert_allclose(dW, total_W)
        np.testing.assert_allclose(db, total_b)

    def test_upstream_shape_mismatch(self, block):
        _, cache = dense_forward(np.ones(3), block, ActivationKind.RELU)
        with pytest.raises(DimensionError):
            dense_backward(cache, np.ones(3))


class TestGlorot:
    def test_variance_and_bounds(self):
        rng = np.random.default_rng(0)
        p = glorot_init(100, 100, rng)
        limit = np.sqrt(6.0 / 200)
        assert np.all(np.abs(p.weights) <= limit)
        assert p.weights.var() == pytest.approx(2.0 / 200, rel=0.1)
        np.testing.assert_array_equal(p.bias, np.zeros(100))

    def test_same_seed_same_weights(self):
        a = glorot_init(3, 4, np.random.default_rng(11), tie_tag='cost')
        b = glorot_init(3, 4, np.random.default_rng(11), tie_tag='cost')
        np.testing.assert_array_equal(a.weights, b.weights)
        assert a.tie_tag == 'cost'

    def test_rejects_empty_layer(self):
        with pytest.raises(DimensionError):
            glorot_init(0, 3, np.random.default_rng(0))


class TestTiedGradients:
    def test_sum_of_copies(self):
        g1 = (np.ones((2, 1)), np.array([1.0, 2.0]))
        g2 = (2 * np.ones((2, 1)), np.array([0.5, 0.5]))
        W, b = accumulate_tied_gradients([g1, g2])
        np.testing.assert_array_equal(W, 3 * np.ones((2, 1)))
        np.testing.assert_array_equal(b, [1.5, 2.5])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            accumulate_tied_gradients([(np.ones((2, 1)), np.ones(2)), (np.ones((3, 1)), np.ones(3))])

    def test_empty(self):
        with pytest.raises(ValueError):
            accumulate_tied_gradients([])


class TestSoftmaxAndLoss:
    def test_softmax_sums_to_one_and_is_shift_invariant(self):
        u = np.array([[1.0, 2.0, 3.0], [1000.0, 1001.0, 999.0]])
        p = softmax(u)
        np.testing.assert_allclose(p.sum(axis=1), [1.0, 1.0])
        np.testing.assert_allclose(p[0], softmax(u[0] + 50.0))
        np.testing.assert_allclose(p[1], p[0][[1, 2, 0]])

    def test_softmax_rejects_non_finite(self):
        with pytest.raises(NumericalError):
            softmax(np.array([1.0, np.nan]))

    def test_cross_entropy(self):
        p = np.array([[0.7, 0.2, 0.1], [0.25, 0.25, 0.5]])
        y = np.array([0, 2])
        assert cross_entropy(p, y) == pytest.approx(-(np.log(0.7) + np.log(0.5)) / 2)

    def test_cross_entropy_clamps_and_counts(self, caplog):
        counter = ClampCounter()
        p = np.array([[1.0, 0.0], [0.5, 0.5]])
        ce = cross_entropy(p, np.array([1, 0]), clamp=1e-12, counter=counter)
        assert np.isfinite(ce)
        assert counter.count == 1
        assert 'Clamped 1' in caplog.text

    def test_softmax_gradient_matches_finite_differences(self):
        u = np.array([[0.2, -0.4, 1.1], [0.0, 0.3, -0.2]])
        y = np.array([2, 0])
        grad = softmax_cross_entropy_grad(softmax(u), y)
        eps = 1e-6
        numeric = np.zeros_like(u)
        for i in range(2):
            for j in range(3):
                plus, minus = u.copy(), u.copy()
                plus[i, j] += eps
                minus[i, j] -= eps
                numeric[i, j] = (cross_entropy(softmax(plus), y) - cross_entropy(softmax(minus), y)) / (2 * eps)
        np.testing.assert_allclose(grad, numeric, atol=1e-6)


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        params = {'w': np.array([1.0, -1.0]), 'b': np.array([0.0])}
        grads = {'w': np.array([0.3, -5.0]), 'b': np.array([2.0])}
        state = AdamState(learning_rate=0.01)
        adam_step(params, grads, state)
        np.testing.assert_allclose(params['w'], [0.99, -0.99], atol=1e-6)
        np.testing.assert_allclose(params['b'], [-0.01], atol=1e-6)
        assert state.step == 1

    def test_updates_in_place(self):
        w = np.array([0.5])
        params = {'w': w}
        adam_step(params, {'w': np.array([1.0])}, AdamState())
        assert params['w'] is w
        assert w[0] < 0.5

    def test_minimizes_quadratic(self):
        params = {'x': np.array([3.0, -2.0])}
        state = AdamState(learning_rate=0.01)
        for _ in range(3000):
            adam_step(params, {'x': 2.0 * params['x']}, state)
        np.testing.assert_allclose(params['x'], [0.0, 0.0], atol=0.05)

    def test_gradient_shape_mismatch(self):
        with pytest.raises(DimensionError):
            adam_step({'w': np.ones(2)}, {'w': np.ones(3)}, AdamState())


class TestSerialization:
    def test_round_trip(self, block):
        restored = blocks_from_dict(blocks_to_dict({'a': block}))
        np.testing.assert_array_equal(restored['a'].weights, block.weights)
        np.testing.assert_array_equal(restored['a'].bias, block.bias)

    def test_layer_sizes(self):
        assert layer_sizes(2, 2, 10) == [(10, 2), (10, 10), (1, 10)]
        assert layer_sizes(1, 1, 5, n_outputs=3) == [(5, 1), (3, 5)]
