"""
Tests for the classifier, decoders and explanation models
"""

import sys
import unittest
from fractions import Fraction
from pathlib import Path

import numpy as np

# Add project root to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.core.models import (  # noqa: E402
    TAP_NAMES,
    LayerTap,
    build_cladec,
    build_decoder,
    build_encoder,
    build_refae,
    forward_to_layer,
    parameter_hash,
    predict,
    reconstruct,
    scaled_widths,
)
from src.core.tensor import Tensor  # noqa: E402
from src.utils.errors import ConfigError, ShapeError, UnknownTapError  # noqa: E402


class TestLayerTap(unittest.TestCase):

    def test_names_and_aliases(self):
        self.assertEqual(LayerTap.parse("conv5"), LayerTap("conv5"))
        self.assertEqual(LayerTap.parse(-1).name, "logits")
        self.assertEqual(LayerTap.parse("-6").name, "conv1")
        self.assertEqual(LayerTap.parse(" Conv3 ").name, "conv3")
        for name in TAP_NAMES:
            self.assertEqual(LayerTap.parse(LayerTap(name).alias).name, name)

    def test_unknown_tap(self):
        for value in ("conv6", "fc", 0, -7, "1"):
            with self.assertRaises(UnknownTapError):
                LayerTap.parse(value)

    def test_shapes_at_full_width(self):
        self.assertEqual(LayerTap("conv1").shape(10), (16, 16, 16))
        self.assertEqual(LayerTap("conv3").shape(10), (64, 4, 4))
        self.assertEqual(LayerTap("conv5").shape(10), (256, 1, 1))
        self.assertEqual(LayerTap("logits").shape(10), (10,))

    def test_width_multiplier_must_give_whole_channels(self):
        self.assertEqual(scaled_widths((16, 32), Fraction(1, 2)), [8, 16])
        with self.assertRaises(ConfigError):
            scaled_widths((16, 32), Fraction(1, 32))


class TestEncoder(unittest.TestCase):
    """Classifier forward passes at every tap"""

    def setUp(self):
        self.classifier = build_encoder(10, "1/8", seed=0)
        self.images = np.random.default_rng(0).uniform(size=(3, 1, 32, 32)).astype(np.float32)

    def test_activation_shapes(self):
        self.classifier.eval()
        for name in TAP_NAMES:
            out = forward_to_layer(self.classifier, self.images, name)
            self.assertEqual(out.shape[1:], LayerTap(name).shape(10, Fraction(1, 8)))

    def test_conv_taps_are_post_relu(self):
        self.classifier.eval()
        out = forward_to_layer(self.classifier, self.images, "conv2")
        self.assertGreaterEqual(float(out.min()), 0.0)

    def test_rejects_wrong_image_shape(self):
        with self.assertRaises(ShapeError):
            self.classifier.forward_full(Tensor(np.zeros((2, 1, 28, 28))))

    def test_truncated_encoder_cannot_reach_deeper_taps(self):
        encoder = build_encoder(10, "1/8", seed=0, tap="conv2")
        self.assertEqual(len(encoder.blocks), 2)
        with self.assertRaises(UnknownTapError):
            encoder.forward_to(Tensor(self.images), "conv3")

    def test_predictions_are_class_indices(self):
        labels = predict(self.classifier, self.images)
        self.assertEqual(labels.shape, (3,))
        self.assertTrue(np.all((labels >= 0) & (labels < 10)))
        self.assertTrue(self.classifier.training)

    def test_needs_two_classes(self):
        with self.assertRaises(ConfigError):
            build_encoder(1, "1/8")


class TestDecoders(unittest.TestCase):
    """Decoder output shape, range and structure"""

    def test_every_tap_reconstructs_a_full_image(self):
        images = np.random.default_rng(1).uniform(size=(2, 1, 32, 32)).astype(np.float32)
        for name in TAP_NAMES:
            model = build_refae(name, 10, "1/8", seed=1)
            out = reconstruct(model, images)
            self.assertEqual(out.shape, (2, 1, 32, 32), name)
            self.assertTrue(np.all((out >= 0.0) & (out <= 1.0)), name)

    def test_stage_count_follows_tap_depth(self):
        self.assertEqual(len(build_decoder("conv1", 10, "1/8").stages), 1)
        self.assertEqual(len(build_decoder("conv4", 10, "1/8").stages), 4)
        logits = build_decoder("logits", 10, "1/8")
        self.assertEqual(len(logits.stages), 5)
        self.assertIsNotNone(logits.entry)

    def test_optional_latent_layer(self):
        decoder = build_decoder("conv3", 10, "1/8", latent_z=16)
        self.assertEqual(decoder.latent.weight.shape, (8 * 4 * 4, 16))
        out = decoder(Tensor(np.zeros((2, 8, 4, 4))))
        self.assertEqual(out.shape, (2, 1, 32, 32))

    def test_decoder_rejects_wrong_activation_shape(self):
        with self.assertRaises(ShapeError):
            build_decoder("conv3", 10, "1/8")(Tensor(np.zeros((2, 4, 4, 4))))


class TestExplanationModels(unittest.TestCase):
    """ClaDec and the reference autoencoder"""

    def setUp(self):
        self.classifier = build_encoder(10, "1/8", seed=0)

    def test_cladec_freezes_the_classifier(self):
        model = build_cladec(self.classifier, "conv4", seed=1)
        self.assertFalse(self.classifier.training)
        self.assertTrue(all(not p.requires_grad for p in self.classifier.parameters()))
        self.assertEqual(len(model.trainable_parameters()), len(model.decoder.parameters()))

    def test_reference_trains_encoder_and_decoder(self):
        model = build_refae("conv4", 10, "1/8", seed=1)
        expected = len(model.encoder.parameters()) + len(model.decoder.parameters())
        self.assertEqual(len(model.trainable_parameters()), expected)

    def test_same_architecture_on_the_decoded_path(self):
        for name in TAP_NAMES:
            cladec = build_cladec(build_encoder(10, "1/8", seed=0), name, seed=1)
            refae = build_refae(name, 10, "1/8", seed=2)
            self.assertEqual(cladec.architecture_summary(), refae.architecture_summary(), name)
            self.assertEqual(cladec.parameter_count(), refae.parameter_count())

    def test_state_dict_round_trip(self):
        source = build_refae("conv3", 10, "1/8", seed=1)
        target = build_refae("conv3", 10, "1/8", seed=9)
        self.assertNotEqual(parameter_hash(source.decoder), parameter_hash(target.decoder))
        target.load_state_dict(source.state_dict())
        self.assertEqual(parameter_hash(source.encoder), parameter_hash(target.encoder))
        self.assertEqual(parameter_hash(source.decoder), parameter_hash(target.decoder))

    def test_state_dict_mismatch(self):
        state = build_refae("conv3", 10, "1/8", seed=1).decoder.state_dict()
        with self.assertRaises(ShapeError):
            build_decoder("conv2", 10, "1/8").load_state_dict(state)

    def test_same_seed_same_weights(self):
        a = build_encoder(10, "1/8", seed=4)
        b = build_encoder(10, "1/8", seed=4)
        self.assertEqual(parameter_hash(a), parameter_hash(b))


if __name__ == "__main__":
    unittest.main()
