"""
Tests for settings, config files and validated run configuration
"""

import sys
import tempfile
import unittest
from fractions import Fraction
from pathlib import Path

# Add project root to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from config.settings import SCALE_PRESETS, Settings, load_config_file, parse_width_multiplier  # noqa: E402
from src.data.schemas import (  # noqa: E402
    METRICS_TABLE,
    TRAINING_HISTORY,
    EpochMetrics,
    ExperimentConfig,
    ExperimentKind,
    LossVariant,
    MetricsRow,
    TrainConfig,
    validated,
)
from src.utils.errors import ConfigError  # noqa: E402


class TestConfigFile(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "run.conf"

    def tearDown(self):
        self.tmp.cleanup()

    def test_parses_keys_and_ignores_comments(self):
        self.path.write_text("# sweep settings\n\ntap = conv3\nloss-variant=layer_recon\nepochs=2\n")
        self.assertEqual(load_config_file(self.path), {"tap": "conv3", "loss_variant": "layer_recon", "epochs": "2"})

    def test_unknown_key(self):
        self.path.write_text("colour=blue\n")
        with self.assertRaises(ConfigError):
            load_config_file(self.path)

    def test_line_without_equals(self):
        self.path.write_text("tap conv3\n")
        with self.assertRaises(ConfigError):
            load_config_file(self.path)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config_file(Path(self.tmp.name) / "absent.conf")


class TestSettings(unittest.TestCase):

    def test_defaults(self):
        settings = Settings(_env_file=None)
        self.assertEqual(settings.seed, 0)
        self.assertEqual(settings.out_dir, Path("runs"))
        self.assertFalse(settings.debug_numerics)

    def test_presets(self):
        self.assertEqual(SCALE_PRESETS["paper"]["n_train"], 60000)
        self.assertEqual(SCALE_PRESETS["paper"]["width_multiplier"], Fraction(1))
        self.assertLess(SCALE_PRESETS["desk"]["epochs"], SCALE_PRESETS["paper"]["epochs"])

    def test_width_multiplier_forms(self):
        self.assertEqual(parse_width_multiplier("1/2"), Fraction(1, 2))
        self.assertEqual(parse_width_multiplier("0.25"), Fraction(1, 4))
        self.assertEqual(parse_width_multiplier(1), Fraction(1))
        for bad in ("zero", "0", "-1/2"):
            with self.assertRaises(ConfigError):
                parse_width_multiplier(bad)


class TestRunConfiguration(unittest.TestCase):

    def test_alpha_must_lie_in_unit_interval(self):
        with self.assertRaises(ConfigError):
            validated(TrainConfig, alpha=1.5)

    def test_unknown_fields_are_rejected(self):
        with self.assertRaises(ConfigError):
            validated(TrainConfig, momentum=0.9)

    def test_loss_variant_accepts_dashes(self):
        self.assertEqual(validated(TrainConfig, loss_variant="layer-recon").loss_variant, LossVariant.LAYER_RECON)

    def test_snapshot_epochs_sorted_and_unique(self):
        self.assertEqual(validated(TrainConfig, snapshot_epochs=[4, 1, 4]).snapshot_epochs, [1, 4])

    def test_experiment_kind_short_names(self):
        self.assertEqual(validated(ExperimentConfig, kind="layer").kind, ExperimentKind.LAYER_SWEEP)
        self.assertEqual(validated(ExperimentConfig, kind="untrained").kind, ExperimentKind.UNTRAINED_ENCODER)

    def test_train_config_inherits_experiment_values(self):
        config = validated(ExperimentConfig, kind="alpha", epochs=3, alpha=0.5)
        train = config.train_config(seed=7, alpha=0.9)
        self.assertEqual((train.epochs, train.seed, train.alpha), (3, 7, 0.9))

    def test_metrics_row_deltas_must_be_consistent(self):
        row = MetricsRow(sweep_value="conv5", n_seeds=1, rec_loss_cladec=8.0, rec_loss_refae=4.5, delta_rec=3.5,
                         acc_eval_cladec=0.9, acc_eval_refae=0.85, delta_acc=0.9 - 0.85)
        self.assertFalse(row.has_std)
        with self.assertRaises(ValueError):
            MetricsRow(sweep_value="conv5", n_seeds=1, rec_loss_cladec=8.0, rec_loss_refae=4.5, delta_rec=1.0,
                       acc_eval_cladec=0.9, acc_eval_refae=0.85, delta_acc=0.05)

    def test_metrics_columns_match_row_fields(self):
        self.assertEqual(METRICS_TABLE.columns, list(MetricsRow.model_fields))

    def test_history_columns_are_plain_names(self):
        self.assertEqual(TRAINING_HISTORY.columns, list(EpochMetrics.model_fields))
        for schema in (TRAINING_HISTORY, METRICS_TABLE):
            self.assertTrue(all(isinstance(name, str) for name in schema.columns))
            self.assertFalse(hasattr(schema, "fields"))


if __name__ == "__main__":
    unittest.main()
