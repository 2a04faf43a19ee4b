"""
Training procedures for the classifier, the reference autoencoder and ClaDec
"""

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..core import ops
from ..core.models import (
    ClaDecModel,
    Encoder,
    ExplanationModel,
    LayerTap,
    build_cladec,
    build_encoder,
    build_refae,
    parameter_hash,
    predict,
    reconstruct,
)
from ..core.optim import Adam
from ..core.tensor import Tape, Tensor, no_record, precision
from ..data.datasets import BatchIterator, ImageDataset
from ..data.schemas import TRAINING_HISTORY, EpochMetrics, LossVariant, TrainConfig
from ..utils.errors import ArtifactIOError, ConfigError, DivergenceError, FrozenEncoderError, ShapeError
from ..utils.id_generation import id_generator
from ..utils.logger import default_logger

WidthLike = Union[str, float]


def derive_seed(seed: int, purpose: str, tap: str = "") -> np.random.SeedSequence:
    """Independent seed stream per (seed, purpose, tap)"""
    return np.random.SeedSequence([int(seed), zlib.crc32(purpose.encode()), zlib.crc32(str(tap).encode())])


def derive_rng(seed: int, purpose: str, tap: str = "") -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, purpose, tap))


def derive_int(seed: int, purpose: str, tap: str = "") -> int:
    return int(derive_seed(seed, purpose, tap).generate_state(1)[0])


@dataclass
class LossBreakdown:
    """total = alpha·reconstruction + (1 − alpha)·secondary"""

    total: Tensor
    reconstruction: Tensor
    secondary: Optional[Tensor]
    alpha: float

    def values(self) -> Tuple[float, float, Optional[float]]:
        return (
            self.total.item(),
            self.reconstruction.item(),
            None if self.secondary is None else self.secondary.item(),
        )


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")


def _combine(reconstruction: Tensor, secondary: Tensor, alpha: float) -> LossBreakdown:
    total = ops.add(ops.scale(reconstruction, alpha), ops.scale(secondary, 1.0 - alpha))
    return LossBreakdown(total=total, reconstruction=reconstruction, secondary=secondary, alpha=alpha)


def loss_cladec(x: Tensor, x_hat: Tensor, logits_of_x_hat: Tensor, labels: np.ndarray,
                alpha: float) -> LossBreakdown:
    """Reconstruction error mixed with the frozen classifier's loss on the reconstruction"""
    _check_alpha(alpha)
    reconstruction = ops.mse_loss(x_hat, x)
    classification = ops.softmax_cross_entropy(logits_of_x_hat, labels)
    return _combine(reconstruction, classification, alpha)


def loss_layer_recon(act_x: Tensor, act_x_hat: Tensor, x: Tensor, x_hat: Tensor,
                     alpha: float) -> LossBreakdown:
    """Reconstruction error mixed with the error of the tap activations of the reconstruction"""
    _check_alpha(alpha)
    if act_x.shape != act_x_hat.shape:
        raise ShapeError(f"Tap activations differ in shape: {act_x.shape} vs {act_x_hat.shape}")
    reconstruction = ops.mse_loss(x_hat, x)
    layer = ops.mse_loss(act_x_hat, act_x)
    return _combine(reconstruction, layer, alpha)


def loss_refae(x: Tensor, x_hat: Tensor) -> Tensor:
    return ops.mse_loss(x_hat, x)


def reconstruction_loss(model: ExplanationModel, dataset: ImageDataset) -> float:
    """Per-sample summed squared error averaged over the dataset"""
    x_hat = reconstruct(model, dataset.images)
    diff = x_hat.astype(np.float64) - dataset.images.astype(np.float64)
    return float((diff * diff).sum() / len(dataset))


def classifier_accuracy(classifier: Encoder, dataset: ImageDataset) -> float:
    return float((predict(classifier, dataset.images) == dataset.labels).mean())


def classifier_loss(classifier: Encoder, dataset: ImageDataset, batch_size: int = 256) -> float:
    """Mean cross-entropy over a dataset in inference mode"""
    was_training = classifier.training
    classifier.eval()
    try:
        total = 0.0
        for i in range(0, len(dataset), batch_size):
            logits = classifier.forward_full(Tensor(dataset.images[i:i + batch_size]))
            batch = ops.softmax_cross_entropy(logits, dataset.labels[i:i + batch_size])
            total += batch.item() * len(logits.data)
    finally:
        classifier.train(was_training)
    return total / len(dataset)


def layer_loss(classifier: Encoder, tap: Union[str, LayerTap], dataset: ImageDataset,
               reconstructions: ImageDataset, batch_size: int = 256) -> float:
    """Tap-activation error of the reconstructions against their originals, averaged per sample"""
    if len(dataset) != len(reconstructions):
        raise ShapeError(f"{len(reconstructions)} reconstructions for {len(dataset)} originals")
    tap = LayerTap.parse(tap)
    was_training = classifier.training
    classifier.eval()
    try:
        total = 0.0
        for i in range(0, len(dataset), batch_size):
            act_x = classifier.forward_to(Tensor(dataset.images[i:i + batch_size]), tap)
            act_x_hat = classifier.forward_to(Tensor(reconstructions.images[i:i + batch_size]), tap)
            total += ops.mse_loss(act_x_hat, act_x).item() * len(act_x.data)
    finally:
        classifier.train(was_training)
    return total / len(dataset)


@dataclass
class TrainingHistory:
    """Per-epoch metrics stream of one run"""

    rows: List[EpochMetrics] = field(default_factory=list)

    def append(self, **values: Union[str, int, float, None]) -> None:
        self.rows.append(EpochMetrics(**values))

    def column(self, name: str) -> List[Optional[float]]:
        return [getattr(row, name) for row in self.rows]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.model_dump() for row in self.rows], columns=TRAINING_HISTORY.columns)

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            self.to_frame().to_csv(path, index=False)
        except OSError as e:
            raise ArtifactIOError(f"Failed to write training history {path}: {e}")
        return path


@dataclass
class ClassifierResult:
    classifier: Encoder
    history: TrainingHistory
    run_id: str
    val_accuracy: Dict[int, float] = field(default_factory=dict)
    snapshots: Dict[int, Dict[str, np.ndarray]] = field(default_factory=dict)

    def restore(self, epoch: int) -> Encoder:
        """Fresh classifier loaded with the snapshot taken after `epoch` epochs"""
        if epoch not in self.snapshots:
            raise ConfigError(f"No classifier snapshot for epoch {epoch}; have {sorted(self.snapshots)}")
        with precision(self.classifier.parameters()[0].data.dtype.name):
            copy = build_encoder(self.classifier.n_classes, self.classifier.width_multiplier)
            copy.load_state_dict(self.snapshots[epoch])
        return copy


@dataclass
class AutoencoderResult:
    model: ExplanationModel
    history: TrainingHistory
    run_id: str
    final_train_loss: float
    final_test_loss: Optional[float] = None


def _snapshot(module: Encoder) -> Dict[str, np.ndarray]:
    return {name: array.copy() for name, array in module.state_dict().items()}


class Trainer:
    """Runs the mini-batch Adam loop shared by the three procedures"""

    def __init__(self, config: TrainConfig, run_id: str):
        self.config = config
        self.run_id = run_id
        self.logger = default_logger
        self.history = TrainingHistory()

    def _check_finite(self, value: float, epoch: int, batch: int) -> None:
        if not np.isfinite(value):
            self.logger.error(f"{self.run_id}: loss became {value} at epoch {epoch}, batch {batch}")
            raise DivergenceError(
                f"Run {self.run_id} diverged: loss {value} at epoch {epoch}, batch {batch} "
                f"(lr {self.config.learning_rate}, batch size {self.config.batch_size})"
            )

    def run_epoch(
        self,
        epoch: int,
        batches: BatchIterator,
        optimizer: Adam,
        step: Callable[[np.ndarray, np.ndarray], LossBreakdown],
    ) -> Tuple[float, float, Optional[float]]:
        """One pass over the data; returns batch-averaged (total, reconstruction, secondary)"""
        totals: List[float] = []
        recs: List[float] = []
        secondaries: List[float] = []
        for b, (images, labels) in enumerate(batches):
            with Tape() as tape:
                breakdown = step(images, labels)
            total, rec, secondary = breakdown.values()
            self._check_finite(total, epoch, b)
            tape.backward(breakdown.total)
            optimizer.step()
            optimizer.zero_grad()
            totals.append(total)
            recs.append(rec)
            if secondary is not None:
                secondaries.append(secondary)
        return (
            float(np.mean(totals)),
            float(np.mean(recs)),
            float(np.mean(secondaries)) if secondaries else None,
        )


def train_classifier(
    train: ImageDataset,
    config: TrainConfig,
    val: Optional[ImageDataset] = None,
    width_multiplier: WidthLike = "1/2",
    run_id: Optional[str] = None,
) -> ClassifierResult:
    """
    Train the classifier on cross-entropy; epochs=0 returns the initial weights

    Snapshots of the weights are kept after every epoch listed in
    `config.snapshot_epochs` (0 = before training).
    """
    run_id = run_id or id_generator.generate_id("classifier", config.seed)
    val = val or train
    trainer = Trainer(config, run_id)
    logger = trainer.logger

    with precision(config.precision):
        classifier = build_encoder(train.n_classes, width_multiplier, rng=derive_rng(config.seed, "classifier"))
        optimizer = Adam(classifier.parameters(), lr=config.learning_rate)
        batches = BatchIterator(train, config.batch_size, derive_int(config.seed, "classifier-batches"),
                                min_batch=2)
        result = ClassifierResult(classifier=classifier, history=trainer.history, run_id=run_id)

        def step(images: np.ndarray, labels: np.ndarray) -> LossBreakdown:
            loss = ops.softmax_cross_entropy(classifier.forward_full(Tensor(images)), labels)
            return LossBreakdown(total=loss, reconstruction=loss, secondary=None, alpha=0.0)

        if config.epochs == 0 or 0 in config.snapshot_epochs:
            accuracy = classifier_accuracy(classifier, val)
            result.val_accuracy[0] = accuracy
            result.snapshots[0] = _snapshot(classifier)
            trainer.history.append(run_id=run_id, seed=config.seed, epoch=0,
                                   loss_total=classifier_loss(classifier, train), val_metric=accuracy)
            logger.info(f"{run_id}: epoch 0 val accuracy {accuracy:.4f}")

        classifier.train()
        for epoch in range(1, config.epochs + 1):
            total, _, _ = trainer.run_epoch(epoch, batches, optimizer, step)
            accuracy = classifier_accuracy(classifier, val)
            classifier.train()
            result.val_accuracy[epoch] = accuracy
            trainer.history.append(run_id=run_id, seed=config.seed, epoch=epoch, loss_total=total,
                                   val_metric=accuracy)
            if epoch in config.snapshot_epochs:
                result.snapshots[epoch] = _snapshot(classifier)
            logger.info(f"{run_id}: epoch {epoch}/{config.epochs} loss {total:.4f} val accuracy {accuracy:.4f}")

        classifier.eval()
    return result


def _require_epochs(config: TrainConfig, what: str) -> None:
    if config.epochs < 1:
        raise ConfigError(f"{what} training needs at least 1 epoch, got {config.epochs}")


def _fit_autoencoder(
    trainer: Trainer,
    model: ExplanationModel,
    train: ImageDataset,
    test: Optional[ImageDataset],
    step: Callable[[np.ndarray, np.ndarray], LossBreakdown],
    batch_seed: int,
) -> AutoencoderResult:
    config = trainer.config
    optimizer = Adam(model.trainable_parameters(), lr=config.learning_rate)
    batches = BatchIterator(train, config.batch_size, batch_seed, min_batch=2)
    last_total = float("nan")
    for epoch in range(1, config.epochs + 1):
        last_total, rec, secondary = trainer.run_epoch(epoch, batches, optimizer, step)
        test_loss = reconstruction_loss(model, test) if test is not None else None
        trainer.history.append(run_id=trainer.run_id, seed=config.seed, epoch=epoch, loss_total=last_total,
                               loss_rec=rec, loss_secondary=secondary, val_metric=test_loss)
        summary = f"{trainer.run_id}: epoch {epoch}/{config.epochs} loss {last_total:.4f} rec {rec:.4f}"
        if secondary is not None:
            summary += f" secondary {secondary:.4f}"
        if test_loss is not None:
            summary += f" test rec {test_loss:.4f}"
        trainer.logger.info(summary)

    return AutoencoderResult(
        model=model,
        history=trainer.history,
        run_id=trainer.run_id,
        final_train_loss=reconstruction_loss(model, train),
        final_test_loss=reconstruction_loss(model, test) if test is not None else None,
    )


def train_refae(
    train: ImageDataset,
    tap: Union[str, LayerTap],
    config: TrainConfig,
    test: Optional[ImageDataset] = None,
    width_multiplier: WidthLike = "1/2",
    run_id: Optional[str] = None,
) -> AutoencoderResult:
    """Train encoder-to-tap and decoder jointly on reconstruction loss"""
    _require_epochs(config, "Reference autoencoder")
    tap = LayerTap.parse(tap)
    run_id = run_id or id_generator.generate_id("refae", config.seed, tap.name)
    trainer = Trainer(config, run_id)

    with precision(config.precision):
        model = build_refae(tap, train.n_classes, width_multiplier, rng=derive_rng(config.seed, "refae", tap.name),
                            latent_z=config.latent_z)
        model.encoder.train()
        model.decoder.train()

        def step(images: np.ndarray, labels: np.ndarray) -> LossBreakdown:
            x = Tensor(images)
            loss = loss_refae(x, model.forward(x))
            return LossBreakdown(total=loss, reconstruction=loss, secondary=None, alpha=1.0)

        result = _fit_autoencoder(trainer, model, train, test, step,
                                  derive_int(config.seed, "refae-batches", tap.name))
    return result


def train_cladec(
    train: ImageDataset,
    classifier: Encoder,
    tap: Union[str, LayerTap],
    config: TrainConfig,
    test: Optional[ImageDataset] = None,
    run_id: Optional[str] = None,
) -> AutoencoderResult:
    """
    Train a decoder on the activations of a frozen classifier

    Gradients of the classification (or layer) term pass through the frozen
    classifier into the decoder; the classifier's weights never change.
    """
    _require_epochs(config, "ClaDec decoder")
    tap = LayerTap.parse(tap)
    run_id = run_id or id_generator.generate_id("cladec", config.seed, tap.name)
    trainer = Trainer(config, run_id)
    encoder_hash = parameter_hash(classifier)

    with precision(config.precision):
        model: ClaDecModel = build_cladec(classifier, tap, rng=derive_rng(config.seed, "cladec", tap.name),
                                          latent_z=config.latent_z)
        model.decoder.train()
        alpha = config.alpha
        variant = config.loss_variant

        def step(images: np.ndarray, labels: np.ndarray) -> LossBreakdown:
            x = Tensor(images)
            x_hat = model.forward(x)
            if variant is LossVariant.LAYER_RECON:
                act_x = classifier.forward_to(x, tap)
                if alpha == 1.0:
                    with no_record():
                        act_x_hat = classifier.forward_to(x_hat, tap)
                else:
                    act_x_hat = classifier.forward_to(x_hat, tap)
                return loss_layer_recon(act_x, act_x_hat, x, x_hat, alpha)
            if alpha == 1.0:
                # the secondary term has zero weight; evaluate it for reporting only
                with no_record():
                    logits = classifier.forward_full(x_hat)
            else:
                logits = classifier.forward_full(x_hat)
            return loss_cladec(x, x_hat, logits, labels, alpha)

        result = _fit_autoencoder(trainer, model, train, test, step,
                                  derive_int(config.seed, "cladec-batches", tap.name))

    if parameter_hash(classifier) != encoder_hash:
        trainer.logger.error(f"{run_id}: classifier parameters changed during decoder training")
        raise FrozenEncoderError(f"Classifier parameters changed during ClaDec run {run_id}")
    return result
