"""
Tests for the setup and quick validation scripts
"""

import io
import sys
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path

# Add project root to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from scripts import quick_validate  # noqa: E402
from scripts.setup import create_directories, create_env_file, missing_idx_files  # noqa: E402


class TestSetup(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_env_file_is_written_once(self):
        with redirect_stdout(io.StringIO()):
            env_file = create_env_file(self.root)
            self.assertIn("CLADEC_SEED=", env_file.read_text())
            env_file.write_text("CLADEC_SEED=9\n")
            create_env_file(self.root)
        self.assertEqual(env_file.read_text(), "CLADEC_SEED=9\n")

    def test_directories_and_missing_files(self):
        created = create_directories(self.root)
        self.assertTrue(all(path.is_dir() for path in created))
        self.assertEqual(len(missing_idx_files(self.root)), 8)

        mnist = [path for path in created if path.name == "mnist"][0]
        (mnist / "train-images-idx3-ubyte").write_bytes(b"")
        self.assertEqual(len(missing_idx_files(self.root)), 7)


class TestQuickValidate(unittest.TestCase):

    def run_check(self, check):
        with redirect_stdout(io.StringIO()) as out:
            ok = check()
        return ok, out.getvalue()

    def test_configuration(self):
        ok, output = self.run_check(quick_validate.check_configuration)
        self.assertTrue(ok)
        self.assertIn("desk, paper", output)

    def test_gradients(self):
        ok, output = self.run_check(quick_validate.check_gradients)
        self.assertTrue(ok, output)

    def test_shapes(self):
        ok, output = self.run_check(quick_validate.check_shapes)
        self.assertTrue(ok, output)


if __name__ == "__main__":
    unittest.main()
