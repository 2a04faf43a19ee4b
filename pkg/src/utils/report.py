"""
Visual and tabular artifacts

Comparison grids (original | RefAE | ClaDec | signed difference) written as
binary PPM, single panels as PGM, and metrics tables as CSV plus an aligned
text rendering.
"""

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from ..core.models import ExplanationModel, predict, reconstruct
from ..data.datasets import ImageDataset
from ..data.schemas import METRICS_TABLE, MetricsRow
from .errors import ArtifactIOError, DataError, ShapeError
from .logger import default_logger

DEFAULT_GAIN = 2.0
SEPARATOR = 2
PANELS_PER_ROW = 4
MARKER_WIDTH = 4
MARKER_CORRECT = (0, 255, 0)
MARKER_WRONG = (255, 0, 0)

logger = default_logger


def diff_map(refae: np.ndarray, cladec: np.ndarray, gain: float = DEFAULT_GAIN) -> np.ndarray:
    """
    Signed difference of two grayscale images as a 3×H×W RGB image

    Green marks pixels where the reference autoencoder is brighter, red where
    the explanation is brighter. Intensity is gain·|d| clamped to [0, 1].
    """
    a = np.asarray(refae, dtype=np.float64)
    b = np.asarray(cladec, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"diff_map needs equal shapes, got {a.shape} and {b.shape}")
    a = a.reshape(a.shape[-2:]) if a.ndim == 3 else a
    b = b.reshape(b.shape[-2:]) if b.ndim == 3 else b
    if a.ndim != 2:
        raise ShapeError(f"diff_map expects H×W or 1×H×W images, got {np.shape(refae)}")

    d = a - b
    out = np.zeros((3,) + d.shape, dtype=np.float64)
    out[1] = np.clip(gain * np.maximum(d, 0.0), 0.0, 1.0)
    out[0] = np.clip(gain * np.maximum(-d, 0.0), 0.0, 1.0)
    return out


@dataclass
class GridRow:
    original: np.ndarray
    refae: np.ndarray
    cladec: np.ndarray
    diff: np.ndarray
    label: int
    correct: bool


@dataclass
class ImageGrid:
    """
    Rows of 32×32 panels plus the label and classifier verdict of each row

    Each row starts with a marker strip: green when the classifier predicts the
    label of the original, red otherwise.
    """

    rows: List[GridRow] = field(default_factory=list)
    tap: Optional[str] = None

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def pixel_size(self) -> tuple:
        """(height, width) of the tiled image including separators"""
        if not self.rows:
            return (SEPARATOR, SEPARATOR)
        side = self.rows[0].original.shape[-1]
        height = len(self.rows) * side + (len(self.rows) + 1) * SEPARATOR
        width = MARKER_WIDTH + PANELS_PER_ROW * side + (PANELS_PER_ROW + 2) * SEPARATOR
        return (height, width)


def render_grid(refae_model: ExplanationModel, cladec_model: ExplanationModel, dataset: ImageDataset,
                indices: Sequence[int], gain: float = DEFAULT_GAIN) -> ImageGrid:
    """Reconstruct the selected test images with both models and lay them out row-wise"""
    if str(refae_model.tap) != str(cladec_model.tap):
        raise ShapeError(f"Models explain different taps: {refae_model.tap} vs {cladec_model.tap}")
    idx = np.asarray(indices, dtype=np.int64)
    if len(idx) == 0:
        raise DataError("render_grid needs at least one sample index")
    if idx.min() < 0 or idx.max() >= len(dataset):
        raise DataError(f"Sample indices out of range for a dataset of {len(dataset)} images")

    originals = dataset.images[idx]
    refae = reconstruct(refae_model, originals)
    cladec = reconstruct(cladec_model, originals)
    predicted = predict(cladec_model.encoder, originals)

    grid = ImageGrid(tap=str(cladec_model.tap))
    for k, i in enumerate(idx):
        label = int(dataset.labels[i])
        grid.rows.append(GridRow(
            original=originals[k, 0],
            refae=refae[k, 0],
            cladec=cladec[k, 0],
            diff=diff_map(refae[k, 0], cladec[k, 0], gain),
            label=label,
            correct=bool(predicted[k] == label),
        ))
    return grid


def _as_rgb(panel: np.ndarray) -> np.ndarray:
    if panel.ndim == 2:
        return np.repeat(panel[None], 3, axis=0)
    return panel


def grid_pixels(grid: ImageGrid) -> np.ndarray:
    """H×W×3 uint8 canvas: marker strip and four panels per row, white separators around them"""
    height, width = grid.pixel_size
    canvas = np.full((height, width, 3), 255, dtype=np.uint8)
    first_panel = 2 * SEPARATOR + MARKER_WIDTH
    for r, row in enumerate(grid.rows):
        side = row.original.shape[-1]
        top = SEPARATOR + r * (side + SEPARATOR)
        canvas[top:top + side, SEPARATOR:SEPARATOR + MARKER_WIDTH] = MARKER_CORRECT if row.correct else MARKER_WRONG
        for c, panel in enumerate((row.original, row.refae, row.cladec, row.diff)):
            left = first_panel + c * (side + SEPARATOR)
            rgb = np.rint(np.clip(_as_rgb(panel), 0.0, 1.0) * 255.0).astype(np.uint8)
            canvas[top:top + side, left:left + side] = rgb.transpose(1, 2, 0)
    return canvas


def _write_bytes(path: Union[str, Path], payload: bytes) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as e:
        logger.error(f"Failed to write {path}: {e}")
        raise ArtifactIOError(f"Cannot write {path}: {e}")
    logger.info(f"Wrote {path}")
    return path


def write_ppm(grid: ImageGrid, path: Union[str, Path]) -> Path:
    """Binary P6 image of the grid"""
    pixels = grid_pixels(grid)
    header = f"P6\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
    return _write_bytes(path, header + pixels.tobytes())


def write_pgm(image: np.ndarray, path: Union[str, Path]) -> Path:
    """Binary P5 image of one grayscale panel (H×W or 1×H×W, values in [0, 1])"""
    panel = np.asarray(image)
    if panel.ndim == 3 and panel.shape[0] == 1:
        panel = panel[0]
    if panel.ndim != 2:
        raise ShapeError(f"write_pgm expects a single grayscale panel, got {np.shape(image)}")
    pixels = np.rint(np.clip(panel, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
    return _write_bytes(path, header + pixels.tobytes())


def metrics_frame(rows: Sequence[MetricsRow]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in rows], columns=METRICS_TABLE.columns)


def _cell(mean: float, std: Optional[float], digits: int) -> str:
    if std is None:
        return f"{mean:.{digits}f}"
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


def metrics_text(rows: Sequence[MetricsRow], title: str = "") -> str:
    """Aligned text table: reconstruction losses, Δ, evaluation accuracies, Δ"""
    table = Table(title=title or None)
    for header in ("Value", "Rec ClaDec", "Rec RefAE", "Δ rec", "Acc ClaDec", "Acc RefAE", "Δ acc"):
        table.add_column(header, justify="left" if header == "Value" else "right")
    for row in rows:
        table.add_row(
            row.sweep_value,
            _cell(row.rec_loss_cladec, row.rec_loss_cladec_std, 3),
            _cell(row.rec_loss_refae, row.rec_loss_refae_std, 3),
            f"{row.delta_rec:.3f}",
            _cell(row.acc_eval_cladec, row.acc_eval_cladec_std, 3),
            _cell(row.acc_eval_refae, row.acc_eval_refae_std, 3),
            f"{row.delta_acc:.3f}",
        )
    console = Console(record=True, width=160, file=io.StringIO())
    console.print(table)
    return console.export_text()


def write_metrics_table(rows: Sequence[MetricsRow], path: Union[str, Path], title: str = "") -> Path:
    """Write `<path>` as CSV and the same rows as an aligned table next to it (.txt)"""
    if not rows:
        raise DataError("write_metrics_table needs at least one row")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        metrics_frame(rows).to_csv(path, index=False, float_format="%.17g")
        path.with_suffix(".txt").write_text(metrics_text(rows, title), encoding="utf-8")
    except OSError as e:
        logger.error(f"Failed to write metrics table {path}: {e}")
        raise ArtifactIOError(f"Cannot write {path}: {e}")
    logger.info(f"Wrote {len(rows)} metrics rows to {path}")
    return path


def _optional(value: object) -> Optional[float]:
    if value is None:
        return None
    number = float(value)  # type: ignore[arg-type]
    return None if math.isnan(number) else number


def read_metrics_table(path: Union[str, Path]) -> List[MetricsRow]:
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"sweep_value": str}, float_precision="round_trip")
    except FileNotFoundError:
        raise ArtifactIOError(f"Metrics table not found: {path}")
    except OSError as e:
        raise ArtifactIOError(f"Cannot read {path}: {e}")
    missing = set(METRICS_TABLE.columns) - set(frame.columns)
    if missing:
        raise DataError(f"{path} lacks columns {sorted(missing)}")

    rows = []
    for record in frame.to_dict(orient="records"):
        values = {name: _optional(record[name]) for name in METRICS_TABLE.columns
                  if name not in ("sweep_value", "n_seeds")}
        rows.append(MetricsRow(sweep_value=str(record["sweep_value"]), n_seeds=int(record["n_seeds"]), **values))
    return rows
