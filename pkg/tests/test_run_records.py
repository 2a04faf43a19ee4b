"""
Tests for run ids and run manifests
"""

import sys
import tempfile
import unittest
from pathlib import Path

# Add project root to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.utils.errors import ArtifactIOError  # noqa: E402
from src.utils.id_generation import RunIdGenerator  # noqa: E402
from src.utils.manifest import (  # noqa: E402
    MANIFEST_NAME,
    build_manifest,
    config_hash,
    git_blob_sha1,
    read_manifest,
    write_manifest,
)


class TestRunIds(unittest.TestCase):

    def setUp(self):
        self.generator = RunIdGenerator()

    def test_prefix_and_seed(self):
        self.assertEqual(self.generator.generate_id("classifier", 3), "CLS000003")
        self.assertEqual(self.generator.generate_id("cladec", 1, "conv5"), "CDC000001-conv5")
        self.assertEqual(self.generator.generate_id("evaluation", 0, 0.5), "EVL000000-0.5")

    def test_point_is_sanitized(self):
        self.assertEqual(self.generator.generate_id("refae", 2, "alpha 0.9/x"), "RAE000002-alpha_0.9_x")

    def test_ids_are_deterministic(self):
        first = self.generator.generate_id("refae", 4, "conv3")
        self.assertEqual(first, self.generator.generate_id("refae", 4, "conv3"))

    def test_parse_kind(self):
        self.assertEqual(self.generator.parse_kind("RAE000002-conv4"), "refae")
        self.assertEqual(self.generator.parse_kind("XYZ000001"), "unknown")


class TestManifest(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_git_blob_hash_of_empty_file(self):
        self.assertEqual(git_blob_sha1(b""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391")

    def test_config_hash_ignores_key_order(self):
        self.assertEqual(config_hash({"a": 1, "b": "x"}), config_hash({"b": "x", "a": 1}))
        self.assertNotEqual(config_hash({"a": 1}), config_hash({"a": 2}))

    def test_build_write_and_read(self):
        inputs = self.root / "inputs"
        inputs.mkdir()
        (inputs / "one.bin").write_bytes(b"")
        (inputs / "two.bin").write_bytes(b"abc")
        manifest = build_manifest("theory-demo", 5, {"dim": 2}, inputs=[inputs, self.root / "missing"],
                                  artifacts=[self.root / "theory.csv"], timings={"run": 0.25})
        self.assertEqual(len(manifest.input_hashes), 2)
        self.assertIn("e69de29bb2d1d6434b8b29ae775ad8c2e48c5391", manifest.input_hashes.values())

        path = write_manifest(manifest, self.root / "run")
        self.assertEqual(path.name, MANIFEST_NAME)
        restored = read_manifest(self.root / "run")
        self.assertEqual(restored, manifest)

    def test_missing_manifest(self):
        with self.assertRaises(ArtifactIOError):
            read_manifest(self.root)


if __name__ == "__main__":
    unittest.main()
