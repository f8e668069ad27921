"""
Tests for the dense tensor kernels
"""

import numpy as np
import pytest

from pgmotion.exceptions import ShapeError
from pgmotion.tensor import (
    as_tensor,
    check_finite,
    concat_frames,
    matmul_left,
    matmul_right,
    transpose_frames_joints,
)


class TestMatmulLeft:
    """a @ x over the second-to-last axis"""

    def test_identity(self, rng):
        x = rng.normal(size=(2, 3, 2, 4))
        assert np.array_equal(matmul_left(np.eye(2), x), x)

    def test_zero_matrix(self, rng):
        x = rng.normal(size=(2, 3, 2, 4))
        assert not matmul_left(np.zeros((2, 2)), x).any()

    def test_hand_example(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        x = np.array([[1.0], [2.0]]).reshape(1, 1, 2, 1)
        assert np.array_equal(matmul_left(a, x)[0, 0], [[5.0], [11.0]])

    def test_associativity(self, rng):
        a, b = rng.normal(size=(2, 4, 4))
        x = rng.normal(size=(2, 3, 4, 5))
        np.testing.assert_allclose(matmul_left(a @ b, x), matmul_left(a, matmul_left(b, x)), atol=1e-10)

    def test_rejects_non_square(self, rng):
        with pytest.raises(ShapeError):
            matmul_left(np.ones((2, 3)), rng.normal(size=(1, 1, 3, 2)))

    def test_rejects_extent_mismatch(self, rng):
        with pytest.raises(ShapeError) as exc:
            matmul_left(np.eye(3), rng.normal(size=(1, 1, 2, 2)))
        assert "(3, 3)" in str(exc.value)

    def test_input_untouched(self, rng):
        x = rng.normal(size=(1, 2, 3, 2))
        before = x.copy()
        matmul_left(np.ones((3, 3)), x)
        assert np.array_equal(x, before)


class TestMatmulRight:
    """x @ w over the last axis"""

    def test_identity(self, rng):
        x = rng.normal(size=(2, 3, 2, 4))
        assert np.array_equal(matmul_right(x, np.eye(4)), x)

    def test_hand_example(self):
        x = np.array([[1.0, 2.0]]).reshape(1, 1, 1, 2)
        assert matmul_right(x, np.array([[1.0], [1.0]]))[0, 0, 0, 0] == 3.0

    def test_zero_output_width_rejected(self, rng):
        with pytest.raises(ShapeError):
            matmul_right(rng.normal(size=(1, 1, 1, 2)), np.zeros((2, 0)))


class TestTranspose:
    def test_shape(self):
        assert transpose_frames_joints(np.zeros((2, 3, 5, 7))).shape == (2, 5, 3, 7)

    def test_involution(self, rng):
        x = rng.normal(size=(2, 3, 5, 7))
        assert np.array_equal(transpose_frames_joints(transpose_frames_joints(x)), x)

    def test_symmetric_content_unchanged(self, rng):
        base = rng.normal(size=(1, 4, 4, 2))
        x = base + base.transpose(0, 2, 1, 3)
        assert np.array_equal(transpose_frames_joints(x), x)

    def test_rank_error(self):
        with pytest.raises(ShapeError):
            transpose_frames_joints(np.zeros((3, 5, 7)))


class TestConcatFrames:
    def test_duplication(self, rng):
        x = rng.normal(size=(1, 10, 5, 16))
        out = concat_frames(x, x)
        assert out.shape == (1, 20, 5, 16)
        assert np.array_equal(out[:, :10], out[:, 10:])

    def test_empty_append(self, rng):
        x = rng.normal(size=(1, 3, 2, 2))
        assert np.array_equal(concat_frames(x, np.zeros((1, 0, 2, 2))), x)

    def test_extent_mismatch(self):
        with pytest.raises(ShapeError):
            concat_frames(np.zeros((1, 3, 2, 2)), np.zeros((1, 3, 4, 2)))


class TestHelpers:
    def test_as_tensor_precision(self):
        assert as_tensor([[1, 2]]).dtype == np.float32
        assert as_tensor([[1, 2]], dtype=np.float64).dtype == np.float64

    def test_as_tensor_rejects_scalar(self):
        with pytest.raises(ShapeError):
            as_tensor(1.0)

    def test_check_finite_counts(self):
        assert check_finite(np.array([1.0, np.nan, np.inf, 0.0])) == 2
