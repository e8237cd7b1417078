"""
Test suite for the Adam optimizer and gradient clipping
Following TDD approach with AAA pattern and descriptive naming
"""

import numpy as np
import pytest

from sentence_localizer.optimizer import Adam, clip_gradients, global_norm


class TestGradientClipping:
    """Global-norm clipping"""

    def test_clip_gradients_above_limit_rescales_to_limit(self):
        """A joint norm of 10 is scaled down to 5"""
        # Arrange
        grads = {'a': np.array([6.0, 0.0]), 'b': np.array([[8.0]])}

        # Act
        norm = clip_gradients(grads, 5.0)

        # Assert
        assert norm == pytest.approx(10.0)
        assert global_norm(grads) == pytest.approx(5.0)
        np.testing.assert_allclose(grads['a'], [3.0, 0.0])

    def test_clip_gradients_below_limit_leaves_gradients_unchanged(self):
        """Small gradients pass through"""
        # Arrange
        grads = {'a': np.array([0.3, 0.4])}

        # Act
        norm = clip_gradients(grads, 5.0)

        # Assert
        assert norm == pytest.approx(0.5)
        np.testing.assert_array_equal(grads['a'], [0.3, 0.4])

    def test_clip_gradients_without_limit_only_measures(self):
        """max_norm None disables clipping"""
        # Arrange
        grads = {'a': np.array([30.0, 40.0])}

        # Act
        norm = clip_gradients(grads, None)

        # Assert
        assert norm == pytest.approx(50.0)
        np.testing.assert_array_equal(grads['a'], [30.0, 40.0])


class TestAdam:
    """Adam updates"""

    def test_step_with_zero_gradient_leaves_parameters_unchanged(self):
        """No gradient, no movement"""
        # Arrange
        params = {'w': np.array([1.0, -2.0, 3.0])}
        optimizer = Adam(learning_rate=0.1)

        # Act
        optimizer.step(params, {'w': np.zeros(3)})

        # Assert
        np.testing.assert_array_equal(params['w'], [1.0, -2.0, 3.0])

    def test_step_first_update_moves_each_entry_by_learning_rate(self):
        """Bias correction makes the first step lr * sign(g)"""
        # Arrange
        params = {'w': np.array([1.0, 1.0])}
        optimizer = Adam(learning_rate=0.01)

        # Act
        optimizer.step(params, {'w': np.array([4.0, -0.5])})

        # Assert
        np.testing.assert_allclose(params['w'], [0.99, 1.01], atol=1e-8)
        assert optimizer.step_count == 1

    def test_step_with_float32_parameters_keeps_dtype_and_updates_in_place(self):
        """Updates are applied to the caller's arrays"""
        # Arrange
        weights = np.ones(4, dtype=np.float32)
        params = {'w': weights}

        # Act
        Adam(learning_rate=0.1).step(params, {'w': np.full(4, 2.0, dtype=np.float32)})

        # Assert
        assert params['w'] is weights
        assert weights.dtype == np.float32
        assert (weights < 1.0).all()

    def test_step_repeated_on_quadratic_converges_toward_minimum(self):
        """Minimising (w - 3)^2 from 0"""
        # Arrange
        params = {'w': np.array([0.0])}
        optimizer = Adam(learning_rate=0.1)

        # Act
        for _ in range(500):
            optimizer.step(params, {'w': 2.0 * (params['w'] - 3.0)})

        # Assert
        assert params['w'][0] == pytest.approx(3.0, abs=0.05)
