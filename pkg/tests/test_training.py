"""
Tests for the training procedures and their loss functions
"""

import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

# Add project root to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.core import ops  # noqa: E402
from src.core.models import parameter_hash  # noqa: E402
from src.core.tensor import Tensor  # noqa: E402
from src.data.datasets import synth_dataset  # noqa: E402
from src.data.schemas import TRAINING_HISTORY, TrainConfig  # noqa: E402
from src.experiments.training import (  # noqa: E402
    Trainer,
    derive_int,
    loss_cladec,
    loss_layer_recon,
    reconstruction_loss,
    train_cladec,
    train_classifier,
    train_refae,
)
from src.utils.errors import ConfigError, DivergenceError, ShapeError  # noqa: E402


class TestLosses(unittest.TestCase):
    """Mixing of reconstruction and secondary terms"""

    def setUp(self):
        rng = np.random.default_rng(0)
        self.x = Tensor(rng.uniform(size=(4, 1, 4, 4)), dtype=np.float64)
        self.x_hat = Tensor(rng.uniform(size=(4, 1, 4, 4)), dtype=np.float64)
        self.logits = Tensor(rng.normal(size=(4, 3)), dtype=np.float64)
        self.labels = np.array([0, 1, 2, 1])

    def test_alpha_one_is_pure_reconstruction(self):
        breakdown = loss_cladec(self.x, self.x_hat, self.logits, self.labels, alpha=1.0)
        self.assertAlmostEqual(breakdown.total.item(), ops.mse_loss(self.x_hat, self.x).item(), places=12)

    def test_alpha_zero_is_pure_classification(self):
        breakdown = loss_cladec(self.x, self.x_hat, self.logits, self.labels, alpha=0.0)
        expected = ops.softmax_cross_entropy(self.logits, self.labels).item()
        self.assertAlmostEqual(breakdown.total.item(), expected, places=12)

    def test_convex_combination(self):
        breakdown = loss_cladec(self.x, self.x_hat, self.logits, self.labels, alpha=0.9)
        total, rec, secondary = breakdown.values()
        self.assertAlmostEqual(total, 0.9 * rec + 0.1 * secondary, places=12)

    def test_alpha_out_of_range(self):
        with self.assertRaises(ConfigError):
            loss_cladec(self.x, self.x_hat, self.logits, self.labels, alpha=1.01)

    def test_layer_variant_needs_matching_activations(self):
        with self.assertRaises(ShapeError):
            loss_layer_recon(self.logits, Tensor(np.zeros((4, 2))), self.x, self.x_hat, alpha=0.5)

    def test_layer_variant_combination(self):
        breakdown = loss_layer_recon(self.logits, Tensor(np.zeros((4, 3)), dtype=np.float64),
                                     self.x, self.x_hat, alpha=0.5)
        _, rec, secondary = breakdown.values()
        self.assertAlmostEqual(secondary, float((self.logits.data ** 2).sum() / 4), places=12)
        self.assertAlmostEqual(breakdown.total.item(), 0.5 * rec + 0.5 * secondary, places=12)


class TestTrainerHelpers(unittest.TestCase):

    def test_divergence_is_reported(self):
        trainer = Trainer(TrainConfig(), "RAE000000-conv5")
        with self.assertRaises(DivergenceError):
            trainer._check_finite(float("nan"), 1, 0)

    def test_seed_streams(self):
        self.assertEqual(derive_int(3, "refae", "conv5"), derive_int(3, "refae", "conv5"))
        self.assertNotEqual(derive_int(3, "refae", "conv5"), derive_int(3, "refae", "conv4"))
        self.assertNotEqual(derive_int(3, "refae"), derive_int(3, "cladec"))


class TestTrainingProcedures(unittest.TestCase):
    """Small runs on the synthetic corpus"""

    @classmethod
    def setUpClass(cls):
        cls.train = synth_dataset(4, 96, seed=0)
        cls.test = synth_dataset(4, 32, seed=1, split="test")
        cls.config = TrainConfig(epochs=2, batch_size=16, learning_rate=3e-3, seed=1)
        cls.classifier = train_classifier(cls.train, cls.config, val=cls.test, width_multiplier="1/8").classifier

    def test_untrained_classifier(self):
        config = TrainConfig(epochs=0, seed=2)
        result = train_classifier(self.train, config, width_multiplier="1/8")
        self.assertEqual(list(result.val_accuracy), [0])
        self.assertEqual(parameter_hash(result.restore(0)), parameter_hash(result.classifier))
        with self.assertRaises(ConfigError):
            result.restore(3)

    def test_untrained_classifier_is_near_chance(self):
        data = synth_dataset(10, 500, seed=1, split="test")
        accuracies = [train_classifier(data, TrainConfig(epochs=0, seed=s), width_multiplier="1/8").val_accuracy[0]
                      for s in range(3)]
        self.assertAlmostEqual(float(np.mean(accuracies)), 0.1, delta=0.1)

    def test_classifier_history_and_snapshots(self):
        config = TrainConfig(epochs=2, batch_size=16, seed=4, snapshot_epochs=[0, 2])
        result = train_classifier(self.train, config, val=self.test, width_multiplier="1/8")
        self.assertEqual(result.history.column("epoch"), [0, 1, 2])
        self.assertEqual(sorted(result.snapshots), [0, 2])
        self.assertNotEqual(parameter_hash(result.restore(0)), parameter_hash(result.restore(2)))
        self.assertTrue(all(0.0 <= a <= 1.0 for a in result.val_accuracy.values()))

    def test_restore_keeps_float64_snapshots(self):
        config = TrainConfig(epochs=1, batch_size=16, seed=4, snapshot_epochs=[1], precision="float64")
        result = train_classifier(self.train, config, width_multiplier="1/8")
        restored = result.restore(1)
        self.assertTrue(all(p.data.dtype == np.float64 for p in restored.parameters()))
        for name, array in restored.state_dict().items():
            np.testing.assert_array_equal(array, result.snapshots[1][name])
        self.assertEqual(parameter_hash(restored), parameter_hash(result.classifier))

    def test_cladec_leaves_classifier_unchanged(self):
        before = parameter_hash(self.classifier)
        result = train_cladec(self.train, self.classifier, "conv3", self.config.model_copy(update={"alpha": 0.9}),
                              test=self.test)
        self.assertEqual(parameter_hash(self.classifier), before)
        self.assertEqual(len(result.history.rows), 2)
        self.assertIsNotNone(result.history.rows[-1].loss_secondary)
        self.assertTrue(np.isfinite(result.final_test_loss))

    def test_cladec_layer_variant(self):
        config = TrainConfig(epochs=1, batch_size=16, learning_rate=3e-3, seed=1, alpha=0.5,
                             loss_variant="layer_recon")
        result = train_cladec(self.train, self.classifier, "conv2", config)
        self.assertEqual(result.model.tap.name, "conv2")
        self.assertIsNone(result.final_test_loss)

    def test_refae_needs_an_epoch(self):
        with self.assertRaises(ConfigError):
            train_refae(self.train, "conv5", TrainConfig(epochs=0), width_multiplier="1/8")

    def test_refae_is_reproducible(self):
        first = train_refae(self.train, "conv4", self.config, width_multiplier="1/8")
        second = train_refae(self.train, "conv4", self.config, width_multiplier="1/8")
        self.assertEqual(parameter_hash(first.model.decoder), parameter_hash(second.model.decoder))
        self.assertEqual(first.run_id, "RAE000001-conv4")
        self.assertAlmostEqual(first.final_train_loss, reconstruction_loss(first.model, self.train), places=6)

    def test_history_csv(self):
        result = train_refae(self.train, "conv5", self.config, test=self.test, width_multiplier="1/8")
        with tempfile.TemporaryDirectory() as tmp:
            path = result.history.write_csv(Path(tmp) / "history.csv")
            frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), TRAINING_HISTORY.columns)
        self.assertEqual(list(frame["epoch"]), [1, 2])


@pytest.mark.slow
class TestLearningProgress(unittest.TestCase):
    """Losses fall when training runs long enough"""

    def test_refae_reconstruction_improves(self):
        train = synth_dataset(4, 256, seed=0)
        config = TrainConfig(epochs=6, batch_size=32, learning_rate=3e-3, seed=0)
        result = train_refae(train, "conv2", config, width_multiplier="1/4")
        losses = result.history.column("loss_rec")
        self.assertLess(losses[-1], losses[0])

    def test_classifier_loss_falls(self):
        train = synth_dataset(4, 256, seed=0)
        config = TrainConfig(epochs=6, batch_size=32, learning_rate=3e-3, seed=0)
        result = train_classifier(train, config, width_multiplier="1/4")
        losses = result.history.column("loss_total")
        self.assertLess(losses[-1], losses[0])

    def test_classifier_reaches_95_percent_within_four_epochs(self):
        train = synth_dataset(4, 1024, seed=0)
        val = synth_dataset(4, 256, seed=1, split="test")
        config = TrainConfig(epochs=4, batch_size=32, learning_rate=3e-3, seed=0)
        result = train_classifier(train, config, val=val, width_multiplier="1/4")
        self.assertGreaterEqual(max(result.val_accuracy.values()), 0.95)

    def test_refae_overfits_two_images(self):
        train = synth_dataset(2, 2, seed=3)
        config = TrainConfig(epochs=300, batch_size=2, learning_rate=3e-3, seed=0)
        result = train_refae(train, "conv2", config, width_multiplier="1/4")
        self.assertLess(result.final_train_loss / (32 * 32), 0.01)

    def test_conv1_reconstructs_better_than_logits(self):
        train = synth_dataset(4, 256, seed=0)
        test = synth_dataset(4, 64, seed=1, split="test")
        config = TrainConfig(epochs=4, batch_size=32, learning_rate=3e-3, seed=0)
        losses = {tap: train_refae(train, tap, config, test=test, width_multiplier="1/4").final_test_loss
                  for tap in ("conv1", "logits")}
        self.assertLess(losses["conv1"], losses["logits"])


if __name__ == "__main__":
    unittest.main()
