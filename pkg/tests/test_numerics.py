import math

import numpy as np
import pytest

from cma.errors import DegenerateVectorError, DimensionError, NumericError
from cma.numerics import affine, gradient_check, is_prob_vector, l2_normalize, softmax


class TestSoftmax:
    def test_symmetric_pair(self):
        assert np.allclose(softmax([0.0, 0.0]), [0.5, 0.5], atol=0)

    def test_exponent_ratio(self):
        out = softmax([math.log(1.0), math.log(3.0)])
        assert np.allclose(out, [0.25, 0.75], atol=1e-12)

    def test_large_equal_inputs_do_not_overflow(self):
        out = softmax([1000.0, 1000.0])
        assert np.all(np.isfinite(out))
        assert np.allclose(out, [0.5, 0.5], atol=0)

    def test_empty_input(self):
        with pytest.raises(DimensionError):
            softmax([])

    def test_non_finite_input(self):
        with pytest.raises(NumericError):
            softmax([1.0, np.nan])

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            v = rng.normal(size=rng.integers(1, 12)) * 10
            c = float(rng.normal() * 100)
            assert np.max(np.abs(softmax(v + c) - softmax(v))) <= 1e-12

    def test_argmax_preserved(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            v = rng.normal(size=6) * rng.uniform(0.1, 50)
            assert np.argmax(softmax(v)) == np.argmax(v)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        m = rng.normal(size=(7, 5)) * 3
        out = softmax(m, axis=-1)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-9)

    def test_output_is_prob_vector(self):
        assert is_prob_vector(softmax([0.3, -1.2, 4.0]))


class TestL2Normalize:
    def test_three_four_five(self):
        assert np.allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateVectorError):
            l2_normalize([0.0, 0.0])

    def test_unit_vector_unchanged(self):
        u = np.array([1.0, 2.0, -2.0]) / 3.0
        assert np.allclose(l2_normalize(u), u, atol=1e-12)

    def test_unit_norm_property(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            v = rng.normal(size=rng.integers(1, 20)) * rng.uniform(1e-3, 1e3)
            assert abs(np.linalg.norm(l2_normalize(v)) - 1.0) <= 1e-12

    def test_direction_preserved(self):
        v = np.array([2.0, -1.0, 0.5])
        out = l2_normalize(v)
        assert np.allclose(out * np.linalg.norm(v), v, atol=1e-12)


class TestAffine:
    def test_identity(self):
        out = affine(np.array([[1.0, 0.0]]), np.eye(2), np.zeros(2))
        assert np.array_equal(out, [[1.0, 0.0]])

    def test_sum(self):
        out = affine(np.array([[1.0, 1.0]]), np.array([[1.0], [1.0]]), np.array([1.0]))
        assert np.array_equal(out, [[3.0]])

    def test_dimension_error_names_shapes(self):
        with pytest.raises(DimensionError) as exc:
            affine(np.ones((1, 3)), np.ones((2, 2)), np.zeros(2))
        assert "(1, 3)" in str(exc.value) and "(2, 2)" in str(exc.value)

    def test_bias_shape_error(self):
        with pytest.raises(DimensionError):
            affine(np.ones((1, 2)), np.ones((2, 2)), np.zeros(3))

    def test_linearity(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 5))
        w = rng.normal(size=(5, 2))
        alpha = 3.7
        lhs = affine(alpha * x, w, np.zeros(2))
        rhs = alpha * affine(x, w, np.zeros(2))
        assert np.max(np.abs(lhs - rhs)) <= 1e-12


class TestGradientCheck:
    def test_quadratic_exact(self):
        err = gradient_check(lambda p: float(p[0] ** 2), np.array([6.0]),
                             np.array([3.0]), eps=1e-5)
        assert err < 1e-6

    def test_wrong_gradient_flagged(self):
        # |6.1 - 6| / (6.1 + 6) = 0.1 / 12.1, frozen by hand.
        err = gradient_check(lambda p: float(p[0] ** 2), np.array([6.1]),
                             np.array([3.0]), eps=1e-5)
        assert abs(err - 0.008264462809917356) < 1e-6
        assert err > 1e-4

    def test_callable_gradient(self):
        err = gradient_check(lambda p: float(np.sum(p ** 3)),
                             lambda p: 3.0 * p ** 2,
                             np.array([0.5, -1.5]), eps=1e-5)
        assert err < 1e-6

    def test_eps_range_enforced(self):
        with pytest.raises(ValueError):
            gradient_check(lambda p: 0.0, np.array([0.0]), np.array([1.0]), eps=1e-2)

    def test_non_finite_loss(self):
        with pytest.raises(NumericError):
            gradient_check(lambda p: float("nan"), np.array([1.0]),
                           np.array([1.0]), eps=1e-5)

    def test_gradient_shape_mismatch(self):
        with pytest.raises(DimensionError):
            gradient_check(lambda p: 0.0, np.array([1.0, 2.0]), np.array([1.0]), eps=1e-5)
