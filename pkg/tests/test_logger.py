"""
Tests for logger setup
"""

import logging
import sys
import tempfile
import unittest
from pathlib import Path

# Add project root to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.utils.errors import ConfigError  # noqa: E402
from src.utils.logger import configure_worker, parse_level, setup_logger  # noqa: E402


class TestLogger(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.name = "cladec.test"

    def tearDown(self):
        for handler in list(logging.getLogger(self.name).handlers):
            handler.close()
        logging.getLogger(self.name).handlers.clear()
        self.tmp.cleanup()

    def test_level_names(self):
        self.assertEqual(parse_level("debug"), logging.DEBUG)
        self.assertEqual(parse_level(" Warning "), logging.WARNING)
        self.assertEqual(parse_level(logging.ERROR), logging.ERROR)
        with self.assertRaises(ConfigError):
            parse_level("chatty")

    def test_file_output(self):
        log_file = Path(self.tmp.name) / "logs" / "run.log"
        logger = setup_logger(self.name, "INFO", log_file, enable_rich=False)
        logger.debug("hidden")
        logger.info("epoch 1/2 loss 0.5")
        for handler in logger.handlers:
            handler.flush()
        text = log_file.read_text()
        self.assertIn("epoch 1/2 loss 0.5", text)
        self.assertNotIn("hidden", text)
        self.assertIn("test_file_output", text)

    def test_setup_replaces_handlers(self):
        setup_logger(self.name, "INFO", enable_rich=False)
        logger = setup_logger(self.name, "ERROR", Path(self.tmp.name) / "run.log", enable_rich=False)
        self.assertEqual(len(logger.handlers), 2)
        self.assertEqual(logger.level, logging.ERROR)
        self.assertFalse(logger.propagate)

    def test_worker_configuration(self):
        root = logging.getLogger("cladec")
        previous = root.level
        try:
            configure_worker(logging.WARNING)
            self.assertEqual(root.level, logging.WARNING)
        finally:
            setup_logger("cladec", previous)


if __name__ == "__main__":
    unittest.main()
