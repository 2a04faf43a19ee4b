"""
Tests for the Adam optimizer
"""

import sys
import unittest
from pathlib import Path

import numpy as np

# Add project root to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.core import ops  # noqa: E402
from src.core.optim import Adam, AdamState, adam_step  # noqa: E402
from src.core.tensor import Tape, parameter, precision  # noqa: E402
from src.utils.errors import ShapeError  # noqa: E402


class TestAdamStep(unittest.TestCase):
    """Single updates of adam_step"""

    def test_zero_gradient_leaves_parameter_unchanged(self):
        with precision("float64"):
            p = parameter(np.array([1.5, -2.0]))
        state = AdamState.for_params([p])
        for _ in range(3):
            adam_step([p], [np.zeros(2)], state)
        np.testing.assert_array_equal(p.data, [1.5, -2.0])
        self.assertEqual(state.t, 3)

    def test_first_step_has_magnitude_lr(self):
        for g in (1e-2, 1.0, 1e2):
            with precision("float64"):
                p = parameter(np.array([0.0]))
            state = AdamState.for_params([p], lr=1e-3)
            adam_step([p], [np.array([g])], state)
            np.testing.assert_allclose(p.data, [-1e-3], rtol=1e-5)

    def test_none_gradient_is_skipped(self):
        with precision("float64"):
            a, b = parameter(np.array([1.0])), parameter(np.array([1.0]))
        state = AdamState.for_params([a, b])
        adam_step([a, b], [None, np.array([1.0])], state)
        self.assertEqual(float(a.data[0]), 1.0)
        self.assertLess(float(b.data[0]), 1.0)

    def test_gradient_shape_mismatch_raises(self):
        p = parameter(np.zeros(3))
        with self.assertRaises(ShapeError):
            adam_step([p], [np.zeros(2)], AdamState.for_params([p]))

    def test_parameter_count_mismatch_raises(self):
        p = parameter(np.zeros(3))
        with self.assertRaises(ShapeError):
            adam_step([p], [], AdamState.for_params([p]))


class TestAdamOnQuadratic(unittest.TestCase):
    """Ten steps on L(w) = w² against a scalar reference"""

    def test_matches_scalar_reference(self):
        lr, beta1, beta2, eps = 0.1, 0.9, 0.999, 1e-8
        with precision("float64"):
            w = parameter(np.array([1.0]))
            optimizer = Adam([w], lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            for _ in range(10):
                optimizer.zero_grad()
                with Tape() as tape:
                    loss = ops.tensor_sum(ops.mse_loss(w, ops.scale(w, 0.0)))
                tape.backward(loss)
                optimizer.step()

        ref, m, v = 1.0, 0.0, 0.0
        for t in range(1, 11):
            g = 2.0 * ref
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            ref -= lr * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + eps)

        self.assertAlmostEqual(float(w.data[0]), ref, places=12)
        self.assertLess(abs(float(w.data[0])), 1.0)


if __name__ == "__main__":
    unittest.main()
