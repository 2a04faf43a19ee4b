"""
Tests for comparison grids, image files and metrics tables
"""

import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

# Add project root to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.core.models import build_cladec, build_encoder, build_refae  # noqa: E402
from src.data.datasets import synth_dataset  # noqa: E402
from src.data.schemas import MetricsRow  # noqa: E402
from src.experiments.evaluation import FULL_SCALE_REFERENCE_ROWS  # noqa: E402
from src.utils.errors import ArtifactIOError, DataError, ShapeError  # noqa: E402
from src.utils.report import (  # noqa: E402
    MARKER_CORRECT,
    MARKER_WRONG,
    GridRow,
    ImageGrid,
    diff_map,
    grid_pixels,
    metrics_text,
    read_metrics_table,
    render_grid,
    write_metrics_table,
    write_pgm,
    write_ppm,
)


def constant_grid(n_rows):
    rows = []
    for r in range(n_rows):
        original = np.full((32, 32), 0.1 * r)
        rows.append(GridRow(original=original, refae=original, cladec=original,
                            diff=diff_map(original, original), label=r, correct=True))
    return ImageGrid(rows=rows, tap="conv5")


class TestDiffMap(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.a = rng.uniform(size=(32, 32))
        self.b = rng.uniform(size=(32, 32))

    def test_identical_images_are_black(self):
        np.testing.assert_array_equal(diff_map(self.a, self.a), np.zeros((3, 32, 32)))

    def test_swapping_inputs_swaps_red_and_green(self):
        forward, backward = diff_map(self.a, self.b), diff_map(self.b, self.a)
        np.testing.assert_array_equal(forward[0], backward[1])
        np.testing.assert_array_equal(forward[1], backward[0])
        np.testing.assert_array_equal(forward[2], 0.0)

    def test_reference_brighter_is_green(self):
        out = diff_map(np.array([[0.8, 0.2]]), np.array([[0.2, 0.8]]), gain=1.0)
        np.testing.assert_allclose(out[:, 0, 0], [0.0, 0.6, 0.0])
        np.testing.assert_allclose(out[:, 0, 1], [0.6, 0.0, 0.0])

    def test_gain_and_clamping(self):
        out = diff_map(np.array([[0.75, 0.9]]), np.array([[0.5, 0.0]]), gain=2.0)
        np.testing.assert_allclose(out[1, 0], [0.5, 1.0])
        np.testing.assert_array_equal(out[0], 0.0)

    def test_channel_first_inputs(self):
        self.assertEqual(diff_map(self.a[None], self.b[None]).shape, (3, 32, 32))

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            diff_map(self.a, self.b[:16])


class TestGridFiles(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_pixel_size(self):
        self.assertEqual(constant_grid(3).pixel_size, (3 * 32 + 4 * 2, 4 + 4 * 32 + 6 * 2))

    def test_ppm_header_and_payload(self):
        path = write_ppm(constant_grid(3), self.root / "grid.ppm")
        payload = path.read_bytes()
        header = b"P6\n144 104\n255\n"
        self.assertTrue(payload.startswith(header))
        self.assertEqual(len(payload), len(header) + 144 * 104 * 3)

    def test_separators_are_white(self):
        pixels = grid_pixels(constant_grid(2))
        self.assertTrue(np.all(pixels[:2] == 255))
        self.assertTrue(np.all(pixels[:, :2] == 255))
        self.assertTrue(np.all(pixels[2:34, 6:8] == 255))
        np.testing.assert_array_equal(pixels[2, 8], [0, 0, 0])

    def test_correctness_markers(self):
        grid = constant_grid(2)
        grid.rows[1].correct = False
        pixels = grid_pixels(grid)
        self.assertTrue(np.all(pixels[2:34, 2:6] == MARKER_CORRECT))
        self.assertTrue(np.all(pixels[36:68, 2:6] == MARKER_WRONG))
        self.assertTrue(np.all(pixels[34:36, 2:6] == 255))

    def test_golden_grid(self):
        rows = [
            GridRow(original=np.zeros((4, 4)), refae=np.ones((4, 4)), cladec=np.full((4, 4), 0.6),
                    diff=diff_map(np.ones((4, 4)), np.full((4, 4), 0.6)), label=0, correct=True),
            GridRow(original=np.full((4, 4), 0.2), refae=np.full((4, 4), 0.25), cladec=np.full((4, 4), 0.75),
                    diff=diff_map(np.full((4, 4), 0.25), np.full((4, 4), 0.75)), label=1, correct=False),
        ]
        path = write_ppm(ImageGrid(rows=rows, tap="conv5"), self.root / "golden.ppm")
        self.assertEqual(path.read_bytes(), (Path(__file__).parent / "fixtures" / "grid_golden.ppm").read_bytes())

    def test_writing_is_deterministic(self):
        first = write_ppm(constant_grid(2), self.root / "a.ppm").read_bytes()
        second = write_ppm(constant_grid(2), self.root / "b.ppm").read_bytes()
        self.assertEqual(first, second)

    def test_pgm(self):
        path = write_pgm(np.ones((1, 4, 5)), self.root / "panel.pgm")
        payload = path.read_bytes()
        self.assertTrue(payload.startswith(b"P5\n5 4\n255\n"))
        self.assertEqual(payload[-20:], b"\xff" * 20)
        with self.assertRaises(ShapeError):
            write_pgm(np.ones((3, 4, 4)), self.root / "rgb.pgm")


class TestRenderGrid(unittest.TestCase):

    def setUp(self):
        self.dataset = synth_dataset(4, 10, seed=0, split="test")
        self.cladec = build_cladec(build_encoder(4, "1/8", seed=0), "conv4", seed=1)
        self.refae = build_refae("conv4", 4, "1/8", seed=2)

    def test_rows_follow_indices(self):
        grid = render_grid(self.refae, self.cladec, self.dataset, [0, 3, 5])
        self.assertEqual(len(grid), 3)
        self.assertEqual([row.label for row in grid.rows], [int(self.dataset.labels[i]) for i in (0, 3, 5)])
        self.assertEqual(grid.rows[0].diff.shape, (3, 32, 32))
        self.assertEqual(grid.tap, "conv4")

    def test_taps_must_match(self):
        with self.assertRaises(ShapeError):
            render_grid(build_refae("conv5", 4, "1/8"), self.cladec, self.dataset, [0])

    def test_indices_are_validated(self):
        with self.assertRaises(DataError):
            render_grid(self.refae, self.cladec, self.dataset, [])
        with self.assertRaises(DataError):
            render_grid(self.refae, self.cladec, self.dataset, [10])


class TestMetricsTables(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "metrics.csv"

    def tearDown(self):
        self.tmp.cleanup()

    def test_reference_rows_survive_a_round_trip(self):
        write_metrics_table(FULL_SCALE_REFERENCE_ROWS, self.path, title="layer sweep")
        self.assertEqual(read_metrics_table(self.path), FULL_SCALE_REFERENCE_ROWS)
        self.assertTrue(self.path.with_suffix(".txt").exists())

    def test_string_sweep_values_and_missing_std(self):
        rows = [
            MetricsRow(sweep_value="1.0", n_seeds=1, rec_loss_cladec=5.0, rec_loss_refae=4.0, delta_rec=1.0,
                       acc_eval_cladec=0.5, acc_eval_refae=0.25, delta_acc=0.25, secondary_cladec=0.7),
            MetricsRow(sweep_value="0.999", n_seeds=1, rec_loss_cladec=6.0, rec_loss_refae=4.0, delta_rec=2.0,
                       acc_eval_cladec=0.75, acc_eval_refae=0.25, delta_acc=0.5),
        ]
        write_metrics_table(rows, self.path)
        restored = read_metrics_table(self.path)
        self.assertEqual([row.sweep_value for row in restored], ["1.0", "0.999"])
        self.assertIsNone(restored[0].rec_loss_cladec_std)
        self.assertIsNone(restored[1].secondary_cladec)
        self.assertEqual(restored, rows)

    def test_text_rendering(self):
        text = metrics_text(FULL_SCALE_REFERENCE_ROWS)
        self.assertIn("Δ rec", text)
        self.assertIn("28.643 ± 1.406", text)
        self.assertIn("logits", text)

    def test_empty_and_missing_tables(self):
        with self.assertRaises(DataError):
            write_metrics_table([], self.path)
        with self.assertRaises(ArtifactIOError):
            read_metrics_table(self.path)

    def test_missing_columns(self):
        self.path.write_text("sweep_value,n_seeds\nconv5,1\n")
        with self.assertRaises(DataError):
            read_metrics_table(self.path)


if __name__ == "__main__":
    unittest.main()
