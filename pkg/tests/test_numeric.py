import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexgraph.numeric import (
    AdamState,
    ShapeError,
    adam_init,
    adam_step,
    cross_entropy,
    layer_norm_backward,
    layer_norm_forward,
    matmul,
    relu_backward,
    relu_forward,
    softmax_rows,
    tensor2d,
)

from helpers import central_difference, max_rel_err, triple_loop_matmul


class TestTensor2d:
    def test_rejects_nan_in_checked_mode(self):
        with pytest.raises(ValueError):
            tensor2d([[1.0, float("nan")]])

    def test_rejects_non_2d(self):
        with pytest.raises(ShapeError):
            tensor2d([1.0, 2.0])

    def test_unchecked_passes_inf(self):
        arr = tensor2d([[np.inf, 1.0]], checked=False)
        assert arr.dtype == np.float64


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(np.eye(2), a), a)

    def test_projector(self):
        p = np.array([[1.0, 0.0], [0.0, 0.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        assert np.array_equal(matmul(p, b), [[5.0, 6.0], [0.0, 0.0]])

    def test_matches_triple_loop_exactly(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        assert np.array_equal(matmul(a, b), triple_loop_matmul(a, b))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))

    def test_bitwise_deterministic(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(5, 8))
        b = rng.normal(size=(8, 6))
        assert np.array_equal(matmul(a, b), matmul(a, b))


class TestRelu:
    def test_sign_split(self):
        assert np.array_equal(relu_forward(np.array([[-1.0, 2.0]])), [[0.0, 2.0]])

    def test_backward_mask(self):
        x = np.array([[-1.0, 2.0]])
        up = np.array([[5.0, 5.0]])
        assert np.array_equal(relu_backward(x, up), [[0.0, 5.0]])

    def test_zero_input_gets_zero_subgradient(self):
        x = np.array([[0.0]])
        assert relu_backward(x, np.array([[3.0]]))[0, 0] == 0.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 4))
        x[np.abs(x) < 1e-3] = 0.5  # stay away from the kink
        analytic = relu_backward(x, np.ones_like(x))
        numeric = central_difference(lambda: float(relu_forward(x).sum()), x)
        assert max_rel_err(analytic, numeric) < 1e-6


class TestLayerNorm:
    def test_constant_row_maps_to_beta(self):
        x = np.array([[5.0, 5.0, 5.0]])
        out, _ = layer_norm_forward(x, np.ones(3), np.zeros(3))
        np.testing.assert_allclose(out, [[0.0, 0.0, 0.0]], atol=1e-12)

    def test_two_point_standardization(self):
        x = np.array([[1.0, 3.0]])
        out, _ = layer_norm_forward(x, np.ones(2), np.zeros(2), eps=1e-12)
        np.testing.assert_allclose(out, [[-1.0, 1.0]], atol=1e-6)

    def test_rows_standardized_pre_affine(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(6, 9)) * 3 + 2
        out, _ = layer_norm_forward(x, np.ones(9), np.zeros(9), eps=1e-12)
        assert np.all(np.abs(out.mean(axis=1)) <= 1e-10)
        assert np.all(np.abs(out.var(axis=1) - 1.0) <= 1e-8)

    def test_all_three_gradients_match_finite_differences(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(3, 5))
        gamma = rng.normal(size=5)
        beta = rng.normal(size=5)
        up = rng.normal(size=(3, 5))

        def loss():
            out, _ = layer_norm_forward(x, gamma, beta)
            return float((out * up).sum())

        _, cache = layer_norm_forward(x, gamma, beta)
        dx, dgamma, dbeta = layer_norm_backward(cache, up)
        assert max_rel_err(dx, central_difference(loss, x)) < 1e-5
        assert max_rel_err(dgamma, central_difference(loss, gamma)) < 1e-5
        assert max_rel_err(dbeta, central_difference(loss, beta)) < 1e-5

    def test_width_mismatch_raises(self):
        with pytest.raises(ShapeError):
            layer_norm_forward(np.zeros((2, 3)), np.ones(4), np.zeros(4))


class TestSoftmax:
    def test_uniform_over_19(self):
        out = softmax_rows(np.zeros((1, 19)))
        np.testing.assert_allclose(out, np.full((1, 19), 1 / 19), atol=1e-15)

    def test_analytic_exponent_ratio(self):
        out = softmax_rows(np.log(np.array([[1.0, 3.0]])))
        np.testing.assert_allclose(out, [[0.25, 0.75]], atol=1e-12)

    @settings(max_examples=50)
    @given(st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=19))
    def test_rows_sum_to_one_entries_open_interval(self, row):
        out = softmax_rows(np.array([row]))
        assert abs(out.sum() - 1.0) <= 1e-12
        assert np.all(out > 0)
        # Above a ~36 logit spread the top entry saturates to exactly 1.0
        # in float64, so the strict upper bound applies below saturation.
        if max(row) - min(row) < 36:
            assert np.all(out < 1)


class TestCrossEntropy:
    def test_uniform_loss_is_log_k(self):
        logits = np.zeros((3, 19))
        loss, _ = cross_entropy(logits, np.array([0, 7, 18]))
        assert loss == pytest.approx(np.log(19), abs=1e-12)

    def test_peaked_loss_near_zero(self):
        logits = np.zeros((1, 19))
        logits[0, 4] = 50.0
        loss, _ = cross_entropy(logits, np.array([4]))
        assert loss < 1e-9

    def test_empty_mask_raises(self):
        with pytest.raises(ValueError, match="no training rows"):
            cross_entropy(np.zeros((2, 3)), np.array([0, 1]), np.zeros(2, dtype=bool))

    def test_grad_zero_outside_mask(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(4, 19))
        mask = np.array([True, False, True, False])
        _, grad = cross_entropy(logits, np.zeros(4, dtype=np.int64), mask)
        assert np.all(grad[~mask] == 0.0)

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        logits = rng.normal(size=(4, 19))
        targets = rng.integers(0, 19, size=4)
        mask = np.array([True, True, False, True])
        _, grad = cross_entropy(logits, targets, mask)
        numeric = central_difference(
            lambda: cross_entropy(logits, targets, mask)[0], logits)
        assert max_rel_err(grad, numeric) < 1e-6


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        params = {"w": np.array([[1.0, -2.0]])}
        before = params["w"].copy()
        state = adam_init(params, lr=0.1)
        adam_step(params, {"w": np.zeros((1, 2))}, state)
        assert np.array_equal(params["w"], before)
        assert state.step == 1

    def test_first_step_identity(self):
        params = {"w": np.array([[0.0]])}
        state = adam_init(params, lr=0.1)
        adam_step(params, {"w": np.array([[1.0]])}, state)
        assert params["w"][0, 0] == pytest.approx(-0.1, rel=1e-6)

    def test_descends_quadratic(self):
        params = {"w": np.array([[1.0]])}
        state = adam_init(params, lr=0.05)
        values = []
        for _ in range(10):
            w = params["w"][0, 0]
            values.append(w * w)
            adam_step(params, {"w": np.array([[2.0 * w]])}, state)
        values.append(params["w"][0, 0] ** 2)
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_shape_mismatch_raises(self):
        params = {"w": np.zeros((2, 2))}
        state = adam_init(params)
        with pytest.raises(ShapeError):
            adam_step(params, {"w": np.zeros((2, 3))}, state)

    def test_step_counter_strictly_increases(self):
        params = {"w": np.zeros((1, 1))}
        state = adam_init(params)
        for expected in (1, 2, 3):
            adam_step(params, {"w": np.ones((1, 1))}, state)
            assert state.step == expected

    def test_rejects_nonpositive_lr(self):
        with pytest.raises(ValueError):
            adam_init({"w": np.zeros((1, 1))}, lr=0.0)
