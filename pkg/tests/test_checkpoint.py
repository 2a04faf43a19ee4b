"""
Tests for the binary checkpoint container
"""

import struct
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

# Add project root to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.core.models import ClaDecModel, build_cladec, build_encoder, build_refae, parameter_hash  # noqa: E402
from src.utils.checkpoint import (  # noqa: E402
    MAGIC,
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_classifier,
    load_model,
    read_checkpoint,
    save_classifier,
    save_model,
)
from src.utils.errors import CheckpointFormatError, MissingCheckpointError  # noqa: E402


class TestCheckpointFiles(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.classifier = build_encoder(10, "1/8", seed=3)

    def tearDown(self):
        self.tmp.cleanup()

    def test_classifier_round_trip_is_byte_identical(self):
        first = save_classifier(self.classifier, self.root / "a.cldc", seed=3, metadata={"val_accuracy": 0.5})
        restored = load_classifier(first)
        second = save_classifier(restored, self.root / "b.cldc", seed=3, metadata={"val_accuracy": 0.5})
        self.assertEqual(first.read_bytes(), second.read_bytes())
        self.assertEqual(parameter_hash(self.classifier), parameter_hash(restored))

    def test_header_layout(self):
        path = save_classifier(self.classifier, self.root / "c.cldc")
        payload = path.read_bytes()
        self.assertEqual(payload[:4], MAGIC)
        version, _ = struct.unpack("<II", payload[4:12])
        self.assertEqual(version, 1)
        checkpoint = read_checkpoint(path)
        self.assertEqual(checkpoint.kind, "classifier")
        self.assertEqual(checkpoint.tap, "logits")

    def test_cladec_model_round_trip(self):
        model = build_cladec(self.classifier, "conv3", seed=1, latent_z=16)
        path = save_model(model, self.root / "cladec.cldc", seed=1)
        restored = load_model(path)
        self.assertIsInstance(restored, ClaDecModel)
        self.assertEqual(restored.tap.name, "conv3")
        self.assertEqual(restored.decoder.latent_z, 16)
        self.assertEqual(parameter_hash(restored.decoder), parameter_hash(model.decoder))
        self.assertTrue(all(not p.requires_grad for p in restored.encoder.parameters()))

    def test_refae_model_round_trip(self):
        model = build_refae("logits", 10, "1/8", seed=2)
        restored = load_model(save_model(model, self.root / "refae.cldc"))
        self.assertEqual(restored.kind, "refae")
        self.assertEqual(parameter_hash(restored.encoder), parameter_hash(model.encoder))

    def test_wrong_kind_is_rejected(self):
        path = save_classifier(self.classifier, self.root / "d.cldc")
        with self.assertRaises(CheckpointFormatError):
            load_model(path)

    def test_missing_file(self):
        with self.assertRaises(MissingCheckpointError):
            read_checkpoint(self.root / "absent.cldc")


class TestCheckpointDecoding(unittest.TestCase):

    def setUp(self):
        model = build_encoder(10, "1/8", seed=0)
        self.payload = encode_checkpoint(Checkpoint(kind="classifier", spec=model.spec(), arrays=model.state_dict()))

    def test_bad_magic(self):
        with self.assertRaises(CheckpointFormatError):
            decode_checkpoint(b"XXXX" + self.payload[4:])

    def test_truncated_arrays(self):
        with self.assertRaises(CheckpointFormatError):
            decode_checkpoint(self.payload[:-4])

    def test_trailing_bytes(self):
        with self.assertRaises(CheckpointFormatError):
            decode_checkpoint(self.payload + b"\x00" * 4)

    def test_arrays_are_float32(self):
        checkpoint = decode_checkpoint(self.payload)
        self.assertTrue(all(a.dtype == np.float32 for a in checkpoint.arrays.values()))


if __name__ == "__main__":
    unittest.main()
