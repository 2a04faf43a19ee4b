"""
Image datasets: IDX ingestion, 28→32 padding, synthetic shapes and batching
"""

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np

from ..utils.errors import CountMismatchError, DataError, IdxFormatError, TruncatedFileError
from ..utils.logger import default_logger
from .schemas import DatasetOrigin

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049
GZIP_MAGIC = b"\x1f\x8b"

# Conventional file names of the MNIST family
IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
DATASET_DIRS = {"mnist": "mnist", "fashion-mnist": "fashion-mnist"}

SOURCE_SIDE = 28
TARGET_SIDE = 32

logger = default_logger


@dataclass(frozen=True, eq=False)
class ImageDataset:
    """N grayscale images (N×1×H×W, pixels in [0, 1]) with class labels"""

    images: np.ndarray
    labels: np.ndarray
    n_classes: int = 10
    split: str = "train"
    origin: DatasetOrigin = DatasetOrigin.ORIGINAL
    name: str = ""

    def __post_init__(self) -> None:
        if self.images.ndim != 4 or self.images.shape[1] != 1:
            raise DataError(f"Images must be N×1×H×W, got {self.images.shape}")
        if len(self.images) == 0:
            raise DataError("Dataset is empty")
        if len(self.labels) != len(self.images):
            raise CountMismatchError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise DataError(
                f"Pixels must lie in [0, 1], got [{self.images.min():.4f}, {self.images.max():.4f}]"
            )
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise DataError(f"Labels must lie in [0, {self.n_classes}), got max {self.labels.max()}")
        if self.split not in ("train", "test"):
            raise DataError(f"Unknown split {self.split!r}")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> Tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def subset(self, indices: np.ndarray) -> "ImageDataset":
        return replace(self, images=self.images[indices], labels=self.labels[indices])

    def with_images(self, images: np.ndarray, origin: DatasetOrigin) -> "ImageDataset":
        """Same labels and split, different pixels (reconstructions or controls)"""
        return replace(self, images=np.asarray(images, dtype=np.float32), origin=origin)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


def _read_header(payload: bytes, path: Path, expected_magic: int, dims: int) -> Tuple[int, ...]:
    if payload[:2] == GZIP_MAGIC:
        raise DataError(f"{path} is gzip-compressed; decompress it first (gunzip {path.name})")
    header_size = 4 * (1 + dims)
    if len(payload) < header_size:
        raise TruncatedFileError(f"{path}: file shorter than its {header_size}-byte header")
    magic, *shape = struct.unpack(f">{1 + dims}i", payload[:header_size])
    if magic != expected_magic:
        raise IdxFormatError(f"Magic number mismatch in {path} ({magic}, expected {expected_magic})")
    return tuple(shape)


def _read_file(path: Path) -> bytes:
    if not path.exists():
        raise DataError(f"Dataset file not found: {path}")
    return path.read_bytes()


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path], n_classes: int = 10,
             split: str = "train") -> ImageDataset:
    """
    Read an IDX image/label file pair

    Data format (big endian):
    images: i32 magic 2051 | i32 count | i32 rows | i32 cols | u8 pixels row-wise
    labels: i32 magic 2049 | i32 count | u8 labels
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    image_bytes = _read_file(images_path)
    label_bytes = _read_file(labels_path)

    count, rows, cols = _read_header(image_bytes, images_path, IDX_IMAGE_MAGIC, 3)
    (label_count,) = _read_header(label_bytes, labels_path, IDX_LABEL_MAGIC, 1)
    if count != label_count:
        raise CountMismatchError(f"{images_path} holds {count} images but {labels_path} holds {label_count} labels")

    pixel_bytes = image_bytes[16:]
    if len(pixel_bytes) < count * rows * cols:
        raise TruncatedFileError(f"{images_path}: expected {count * rows * cols} pixel bytes, found {len(pixel_bytes)}")
    if len(label_bytes) - 8 < count:
        raise TruncatedFileError(f"{labels_path}: expected {count} labels, found {len(label_bytes) - 8}")

    pixels = np.frombuffer(pixel_bytes, dtype=np.uint8, count=count * rows * cols)
    images = (pixels.reshape(count, 1, rows, cols).astype(np.float32) / np.float32(255.0))
    labels = np.frombuffer(label_bytes[8:], dtype=np.uint8, count=count).astype(np.int64)
    logger.debug(f"Loaded {count} {rows}×{cols} images from {images_path}")
    return ImageDataset(images=images, labels=labels, n_classes=n_classes, split=split,
                        name=images_path.parent.name)


def write_idx(dataset: ImageDataset, images_path: Union[str, Path], labels_path: Union[str, Path]) -> None:
    """Write a dataset as an IDX pair, quantizing pixels to bytes"""
    images_path, labels_path = Path(images_path), Path(labels_path)
    n, _, rows, cols = dataset.images.shape
    pixels = np.rint(dataset.images * 255.0).astype(np.uint8)
    images_path.parent.mkdir(parents=True, exist_ok=True)
    labels_path.parent.mkdir(parents=True, exist_ok=True)
    images_path.write_bytes(struct.pack(">4i", IDX_IMAGE_MAGIC, n, rows, cols) + pixels.tobytes())
    labels_path.write_bytes(struct.pack(">2i", IDX_LABEL_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes())


def pad_to_32(dataset: ImageDataset) -> ImageDataset:
    """Zero-pad 28×28 images by 2 pixels on every side"""
    if dataset.image_shape != (1, SOURCE_SIDE, SOURCE_SIDE):
        raise DataError(f"pad_to_32 expects 1×28×28 images, got {dataset.image_shape}")
    margin = (TARGET_SIDE - SOURCE_SIDE) // 2
    padded = np.pad(dataset.images, ((0, 0), (0, 0), (margin, margin), (margin, margin)))
    return replace(dataset, images=padded)


def _draw_shape(canvas: np.ndarray, shape: int, cy: int, cx: int, value: float) -> None:
    if shape == 0:  # horizontal bar
        canvas[cy - 1:cy + 2, cx - 6:cx + 7] = value
    elif shape == 1:  # vertical bar
        canvas[cy - 6:cy + 7, cx - 1:cx + 2] = value
    elif shape == 2:  # box outline
        canvas[cy - 5:cy + 6, cx - 5:cx + 6] = value
        canvas[cy - 3:cy + 4, cx - 3:cx + 4] = 0.0
    elif shape == 3:  # cross
        canvas[cy - 1:cy + 2, cx - 6:cx + 7] = value
        canvas[cy - 6:cy + 7, cx - 1:cx + 2] = value
    else:  # diagonal
        for t in range(-6, 7):
            canvas[cy + t, cx + t - 1:cx + t + 1] = value


# Class c draws shape c % 5 around one of two anchor points
_SYNTH_ANCHORS = ((11, 11), (20, 20))
_SYNTH_JITTER = 2
_BACKDROP_SIDES = (6, 13)
_BACKDROP_LEVELS = (0.2, 0.45)


def synth_dataset(n_classes: int, n: int, seed: int, split: str = "train") -> ImageDataset:
    """
    Procedural shape corpus for fast experiments

    Labels are assigned round-robin. Each image is one class-specific shape
    at a class-specific anchor with ±2 pixel jitter and intensity in [0.7, 1],
    drawn over a class-independent backdrop: a dimmer rectangle (intensity in
    [0.2, 0.45), sides 6..12) at a random position. Additive Gaussian noise
    (σ 0.05) follows, clipped to [0, 1].
    """
    if not 2 <= n_classes <= 10:
        raise DataError(f"synth_dataset supports 2..10 classes, got {n_classes}")
    if n < 1:
        raise DataError(f"synth_dataset needs n ≥ 1, got {n}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % n_classes
    images = np.zeros((n, 1, TARGET_SIDE, TARGET_SIDE), dtype=np.float32)
    jitter = rng.integers(-_SYNTH_JITTER, _SYNTH_JITTER + 1, size=(n, 2))
    intensity = rng.uniform(0.7, 1.0, size=n)
    sides = rng.integers(*_BACKDROP_SIDES, size=(n, 2))
    corners = rng.integers(0, TARGET_SIDE - sides + 1)
    backdrop = rng.uniform(*_BACKDROP_LEVELS, size=n)
    for i, label in enumerate(labels):
        (top, left), (h, w) = corners[i], sides[i]
        images[i, 0, top:top + h, left:left + w] = backdrop[i]
        cy, cx = _SYNTH_ANCHORS[label // 5]
        _draw_shape(images[i, 0], int(label % 5), cy + jitter[i, 0], cx + jitter[i, 1], intensity[i])
    images += rng.normal(0.0, 0.05, size=images.shape).astype(np.float32)
    np.clip(images, 0.0, 1.0, out=images)
    return ImageDataset(images=images, labels=labels, n_classes=n_classes, split=split, name="synth")


@dataclass
class BatchIterator:
    """
    Seeded mini-batches; every epoch is a fresh permutation of all indices

    A trailing batch smaller than `min_batch` is merged into the previous one.
    """

    dataset: ImageDataset
    batch_size: int
    seed: int
    shuffle: bool = True
    min_batch: int = 1
    epoch: int = field(default=0)

    def permutation(self, epoch: int) -> np.ndarray:
        n = len(self.dataset)
        if not self.shuffle:
            return np.arange(n)
        return np.random.default_rng([self.seed, epoch]).permutation(n)

    def batch_indices(self, epoch: int) -> List[np.ndarray]:
        order = self.permutation(epoch)
        batches = [order[i:i + self.batch_size] for i in range(0, len(order), self.batch_size)]
        if len(batches) > 1 and len(batches[-1]) < self.min_batch:
            tail = batches.pop()
            batches[-1] = np.concatenate([batches[-1], tail])
        return batches

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        epoch = self.epoch
        self.epoch += 1
        for idx in self.batch_indices(epoch):
            yield self.dataset.images[idx], self.dataset.labels[idx]

    def __len__(self) -> int:
        return len(self.batch_indices(self.epoch))


def _idx_directory(data_dir: Path, dataset: str) -> Path:
    nested = data_dir / DATASET_DIRS[dataset]
    return nested if nested.exists() else data_dir


def load_dataset(dataset: str, split: str, n: Optional[int] = None, seed: int = 0,
                 data_dir: Union[str, Path] = "data", n_classes: int = 10) -> ImageDataset:
    """
    Load a 32×32 split of 'synth', 'mnist' or 'fashion-mnist'

    For the IDX datasets `n` selects a seeded random subset; synthetic splits
    are drawn with distinct seeds for train and test.
    """
    if split not in IDX_FILES:
        raise DataError(f"Unknown split {split!r}")
    if dataset == "synth":
        size = n if n is not None else (8000 if split == "train" else 2000)
        return synth_dataset(n_classes, size, seed=2 * seed + int(split == "test"), split=split)
    if dataset not in DATASET_DIRS:
        raise DataError(f"Unknown dataset {dataset!r}; expected synth, mnist or fashion-mnist")

    directory = _idx_directory(Path(data_dir), dataset)
    images_name, labels_name = IDX_FILES[split]
    raw = load_idx(directory / images_name, directory / labels_name, split=split)
    if n is not None and n < len(raw):
        keep = np.sort(np.random.default_rng([seed, int(split == "test")]).choice(len(raw), size=n, replace=False))
        raw = raw.subset(keep)
    logger.info(f"Loaded {len(raw)} {split} images of {dataset} from {directory}")
    return replace(pad_to_32(raw), name=dataset)
