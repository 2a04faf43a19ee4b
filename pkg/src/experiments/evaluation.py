"""
Fidelity/interpretability evaluation protocol and sweep experiments

Interpretability is the reconstruction loss of an explanation model on the
test split. Fidelity is the test accuracy of a freshly initialized
evaluation classifier trained and tested on that model's reconstructions.
Every sweep point is run once per seed and aggregated to mean ± std.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..core.models import Encoder, ExplanationModel, LayerTap, reconstruct
from ..data.datasets import ImageDataset, load_dataset
from ..data.schemas import DatasetOrigin, ExperimentConfig, ExperimentKind, LossVariant, MetricsRow, validated
from ..utils.errors import ConfigError, ReconstructionRangeError
from ..utils.id_generation import id_generator
from ..utils.logger import configure_worker, default_logger
from ..utils.report import ImageGrid, render_grid
from .training import (
    AutoencoderResult,
    ClassifierResult,
    classifier_accuracy,
    classifier_loss,
    derive_int,
    layer_loss,
    train_cladec,
    train_classifier,
    train_refae,
)

DEFAULT_SWEEP_VALUES: Dict[ExperimentKind, List[str]] = {
    ExperimentKind.LAYER_SWEEP: ["conv3", "conv4", "conv5", "logits"],
    ExperimentKind.ALPHA_SWEEP: ["1.0", "0.999", "0.9", "0.5", "0.0"],
    ExperimentKind.EPOCH_SWEEP: ["0", "1", "2", "4", "8"],
    ExperimentKind.UNTRAINED_ENCODER: [],
    ExperimentKind.CONTROLS: ["pass-through", "constant"],
}

GRID_SAMPLES = 8
CONSTANT_LEVEL = 0.5


def _reference_row(value: str, rec_c: float, rec_c_std: float, rec_r: float, rec_r_std: float,
                   acc_c: float, acc_c_std: float, acc_r: float, acc_r_std: float) -> MetricsRow:
    return MetricsRow(
        sweep_value=value, n_seeds=5,
        rec_loss_cladec=rec_c, rec_loss_cladec_std=rec_c_std,
        rec_loss_refae=rec_r, rec_loss_refae_std=rec_r_std, delta_rec=rec_c - rec_r,
        acc_eval_cladec=acc_c, acc_eval_cladec_std=acc_c_std,
        acc_eval_refae=acc_r, acc_eval_refae_std=acc_r_std, delta_acc=acc_c - acc_r,
    )


# Published full-scale Fashion-MNIST layer sweep (64 epochs, 5 seeds); deltas
# are recomputed from the means and may differ from the printed ones in the last digit
FULL_SCALE_REFERENCE_ROWS: List[MetricsRow] = [
    _reference_row("conv3", 5.746, 0.065, 4.155, 0.078, 0.884, 0.004, 0.877, 0.004),
    _reference_row("conv4", 5.725, 0.083, 4.18, 0.042, 0.886, 0.004, 0.883, 0.003),
    _reference_row("conv5", 8.221, 0.165, 4.626, 0.061, 0.888, 0.005, 0.877, 0.002),
    _reference_row("logits", 28.643, 1.406, 7.818, 0.196, 0.902, 0.003, 0.841, 0.006),
]


@dataclass
class SeedResult:
    """Raw metrics of one sweep point for one seed"""

    sweep_value: str
    seed: int
    rec_loss_cladec: float
    rec_loss_refae: float
    acc_eval_cladec: float
    acc_eval_refae: float
    secondary_cladec: Optional[float] = None
    encoder_val_acc: Optional[float] = None


@dataclass
class SweepResult:
    kind: ExperimentKind
    rows: List[MetricsRow]
    per_seed: List[SeedResult] = field(default_factory=list)
    grids: Dict[str, ImageGrid] = field(default_factory=dict)

    @property
    def grid(self) -> Optional[ImageGrid]:
        return next(iter(self.grids.values()), None)

    def per_seed_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.per_seed])


def mean_std(values: Sequence[float]) -> Tuple[float, Optional[float]]:
    """Sample mean and unbiased standard deviation (None for a single value)"""
    series = pd.Series(list(values), dtype="float64")
    if series.empty:
        raise ConfigError("Cannot aggregate an empty list of runs")
    std = float(series.std(ddof=1)) if len(series) >= 2 else None
    return float(series.mean()), std


def aggregate_runs(runs: Sequence[SeedResult]) -> MetricsRow:
    """Collapse per-seed results of one sweep point into mean ± std"""
    if not runs:
        raise ConfigError("aggregate_runs needs at least one run")
    frame = pd.DataFrame([asdict(r) for r in runs])
    stats = {col: mean_std(frame[col]) for col in
             ("rec_loss_cladec", "rec_loss_refae", "acc_eval_cladec", "acc_eval_refae")}
    optional = {}
    for col in ("secondary_cladec", "encoder_val_acc"):
        present = frame[col].dropna()
        optional[col] = float(present.mean()) if not present.empty else None

    rec_c, rec_r = stats["rec_loss_cladec"][0], stats["rec_loss_refae"][0]
    acc_c, acc_r = stats["acc_eval_cladec"][0], stats["acc_eval_refae"][0]
    return MetricsRow(
        sweep_value=str(runs[0].sweep_value),
        n_seeds=len(runs),
        rec_loss_cladec=rec_c,
        rec_loss_cladec_std=stats["rec_loss_cladec"][1],
        rec_loss_refae=rec_r,
        rec_loss_refae_std=stats["rec_loss_refae"][1],
        delta_rec=rec_c - rec_r,
        acc_eval_cladec=acc_c,
        acc_eval_cladec_std=stats["acc_eval_cladec"][1],
        acc_eval_refae=acc_r,
        acc_eval_refae_std=stats["acc_eval_refae"][1],
        delta_acc=acc_c - acc_r,
        secondary_cladec=optional["secondary_cladec"],
        encoder_val_acc=optional["encoder_val_acc"],
    )


def as_reconstructions(images: np.ndarray, reference: ImageDataset,
                       origin: DatasetOrigin = DatasetOrigin.RECONSTRUCTION) -> ImageDataset:
    """Pair generated images with the labels of `reference`, checking the pixel range"""
    low, high = float(np.min(images)), float(np.max(images))
    if low < 0.0 or high > 1.0:
        raise ReconstructionRangeError(f"Reconstructions must lie in [0, 1], got [{low:.4f}, {high:.4f}]")
    return reference.with_images(images, origin)


def train_eval_classifier(
    train: ImageDataset,
    test: ImageDataset,
    config: ExperimentConfig,
    seed: int,
    originals: Optional[ImageDataset] = None,
) -> float:
    """
    Accuracy of a fresh classifier trained and tested on generated images

    `originals` (only with eval_input_pairs) adds the original training images
    to the training set; the test set is always generated images.
    """
    for part in (train, test):
        if part.origin is DatasetOrigin.ORIGINAL:
            raise ConfigError("Evaluation classifiers are trained and tested on reconstructions only")
    if originals is not None:
        if not config.eval_input_pairs:
            raise ConfigError("Original images for the evaluation classifier need eval_input_pairs")
        train = ImageDataset(
            images=np.concatenate([originals.images, train.images]),
            labels=np.concatenate([originals.labels, train.labels]),
            n_classes=train.n_classes, split="train", origin=train.origin,
        )

    result = train_classifier(train, config.train_config(seed), width_multiplier=config.width_multiplier,
                              run_id=id_generator.generate_id("evaluation", seed))
    return classifier_accuracy(result.classifier, test)


def _summed_error(images: np.ndarray, dataset: ImageDataset) -> float:
    diff = images.astype(np.float64) - dataset.images.astype(np.float64)
    return float((diff * diff).sum() / len(dataset))


def _secondary_loss(config: ExperimentConfig, classifier: Encoder, tap: LayerTap, test: ImageDataset,
                    reconstructions: ImageDataset) -> float:
    """The non-reconstruction term the ClaDec decoder was trained with, on test reconstructions"""
    if config.loss_variant is LossVariant.LAYER_RECON:
        return layer_loss(classifier, tap, test, reconstructions)
    return classifier_loss(classifier, reconstructions)


def _evaluate_pair(
    config: ExperimentConfig,
    seed: int,
    value: str,
    train: ImageDataset,
    test: ImageDataset,
    classifier: Encoder,
    cladec: ExplanationModel,
    refae: ExplanationModel,
    encoder_val_acc: Optional[float] = None,
) -> SeedResult:
    """Interpretability and fidelity metrics of a ClaDec/reference pair"""
    eval_seed = derive_int(seed, "evaluation", cladec.tap.name) % 2**31
    originals = train if config.eval_input_pairs else None
    accuracies = []
    rec_losses = []
    test_recons = []
    for model in (cladec, refae):
        train_recon = as_reconstructions(reconstruct(model, train.images), train)
        test_recon = as_reconstructions(reconstruct(model, test.images), test)
        rec_losses.append(_summed_error(test_recon.images, test))
        test_recons.append(test_recon)
        accuracies.append(train_eval_classifier(train_recon, test_recon, config, eval_seed, originals))

    return SeedResult(
        sweep_value=value,
        seed=seed,
        rec_loss_cladec=rec_losses[0],
        rec_loss_refae=rec_losses[1],
        acc_eval_cladec=accuracies[0],
        acc_eval_refae=accuracies[1],
        secondary_cladec=_secondary_loss(config, classifier, cladec.tap, test, test_recons[0]),
        encoder_val_acc=encoder_val_acc,
    )


def evaluate_models(config: ExperimentConfig, seed: int, train: ImageDataset, test: ImageDataset,
                    cladec: ExplanationModel, refae: ExplanationModel) -> MetricsRow:
    """Single-seed metrics row for an already trained ClaDec/reference pair"""
    if cladec.tap != refae.tap:
        raise ConfigError(f"ClaDec explains {cladec.tap} but the reference autoencoder {refae.tap}")
    result = _evaluate_pair(config, seed, cladec.tap.name, train, test, cladec.encoder, cladec, refae)
    return aggregate_runs([result])


def _train_refae(config: ExperimentConfig, seed: int, tap: LayerTap, train: ImageDataset,
                 test: ImageDataset) -> AutoencoderResult:
    return train_refae(train, tap, config.train_config(seed), test=test, width_multiplier=config.width_multiplier)


def _train_classifier(config: ExperimentConfig, seed: int, train: ImageDataset, test: ImageDataset,
                      epochs: Optional[int] = None, snapshots: Sequence[int] = ()) -> ClassifierResult:
    overrides = {"epochs": config.epochs if epochs is None else epochs, "snapshot_epochs": list(snapshots)}
    return train_classifier(train, config.train_config(seed, **overrides), val=test,
                            width_multiplier=config.width_multiplier)


SeedOutcome = Tuple[List[SeedResult], Dict[str, ImageGrid]]


def _grid(refae: ExplanationModel, cladec: ExplanationModel, test: ImageDataset) -> ImageGrid:
    return render_grid(refae, cladec, test, list(range(min(GRID_SAMPLES, len(test)))))


def _layer_seed(config: ExperimentConfig, seed: int, train: ImageDataset, test: ImageDataset) -> SeedOutcome:
    classifier = _train_classifier(config, seed, train, test)
    results = []
    grids = {}
    for value in config.values:
        tap = LayerTap.parse(value)
        refae = _train_refae(config, seed, tap, train, test)
        cladec = train_cladec(train, classifier.classifier, tap, config.train_config(seed), test=test)
        results.append(_evaluate_pair(config, seed, tap.name, train, test, classifier.classifier,
                                      cladec.model, refae.model, classifier.val_accuracy.get(config.epochs)))
        grids[tap.name] = _grid(refae.model, cladec.model, test)
    return results, grids


def _alpha_seed(config: ExperimentConfig, seed: int, train: ImageDataset, test: ImageDataset) -> SeedOutcome:
    tap = LayerTap.parse(config.tap)
    classifier = _train_classifier(config, seed, train, test)
    refae = _train_refae(config, seed, tap, train, test)
    results = []
    grids = {}
    for value in config.values:
        alpha = float(value)
        cladec = train_cladec(train, classifier.classifier, tap, config.train_config(seed, alpha=alpha), test=test)
        results.append(_evaluate_pair(config, seed, value, train, test, classifier.classifier,
                                      cladec.model, refae.model, classifier.val_accuracy.get(config.epochs)))
        grids[value] = _grid(refae.model, cladec.model, test)
    return results, grids


def _snapshot_runs(config: ExperimentConfig, seed: int, train: ImageDataset, test: ImageDataset,
                   epochs: Sequence[int]) -> SeedOutcome:
    """One ClaDec decoder per classifier snapshot, all compared with the same reference autoencoder"""
    tap = LayerTap.parse(config.tap)
    classifier = _train_classifier(config, seed, train, test, epochs=max(epochs), snapshots=epochs)
    refae = _train_refae(config, seed, tap, train, test)
    results = []
    grids = {}
    for k in epochs:
        snapshot = classifier.restore(k)
        cladec = train_cladec(train, snapshot, tap, config.train_config(seed), test=test)
        results.append(_evaluate_pair(config, seed, str(k), train, test, snapshot, cladec.model, refae.model,
                                      classifier.val_accuracy[k]))
        grids[str(k)] = _grid(refae.model, cladec.model, test)
    return results, grids


def _epoch_seed(config: ExperimentConfig, seed: int, train: ImageDataset, test: ImageDataset) -> SeedOutcome:
    return _snapshot_runs(config, seed, train, test, sorted({int(v) for v in config.values}))


def _untrained_seed(config: ExperimentConfig, seed: int, train: ImageDataset, test: ImageDataset) -> SeedOutcome:
    """Untrained classifier (row '0') next to the fully trained one (row '<epochs>')"""
    return _snapshot_runs(config, seed, train, test, [0, config.epochs])


def control_dataset(dataset: ImageDataset, control: str) -> ImageDataset:
    """
    Control inputs for the evaluation classifier, labelled like `dataset`

    "pass-through" hands over the original images unchanged; "constant"
    replaces every image by uniform gray, which leaves nothing to learn.
    """
    if control == "pass-through":
        images = dataset.images
    elif control == "constant":
        images = np.full_like(dataset.images, CONSTANT_LEVEL)
    else:
        raise ConfigError(f"Unknown control {control!r}; expected pass-through or constant")
    return as_reconstructions(images, dataset, origin=DatasetOrigin.CONTROL)


def _controls_seed(config: ExperimentConfig, seed: int, train: ImageDataset, test: ImageDataset) -> SeedOutcome:
    """
    Evaluation classifiers on control inputs next to direct training on originals

    The cladec columns hold the control run, the refae columns the directly
    trained classifier (its inputs are the originals, so its rec loss is 0).
    """
    classifier = _train_classifier(config, seed, train, test)
    direct = classifier.val_accuracy[config.epochs]
    eval_seed = derive_int(seed, "evaluation", "controls") % 2**31
    results = []
    for value in config.values:
        train_control = control_dataset(train, value)
        test_control = control_dataset(test, value)
        accuracy = train_eval_classifier(train_control, test_control, config, eval_seed)
        default_logger.info(f"control {value}: accuracy {accuracy:.4f}, direct training {direct:.4f}")
        results.append(SeedResult(
            sweep_value=value,
            seed=seed,
            rec_loss_cladec=_summed_error(test_control.images, test),
            rec_loss_refae=0.0,
            acc_eval_cladec=accuracy,
            acc_eval_refae=direct,
            encoder_val_acc=direct,
        ))
    return results, {}


_SEED_RUNNERS: Dict[ExperimentKind, Callable[..., SeedOutcome]] = {
    ExperimentKind.LAYER_SWEEP: _layer_seed,
    ExperimentKind.ALPHA_SWEEP: _alpha_seed,
    ExperimentKind.EPOCH_SWEEP: _epoch_seed,
    ExperimentKind.UNTRAINED_ENCODER: _untrained_seed,
    ExperimentKind.CONTROLS: _controls_seed,
}


def _run_seed(config: ExperimentConfig, seed: int, train: ImageDataset, test: ImageDataset) -> SeedOutcome:
    default_logger.info(f"{config.kind.value}: seed {seed} started")
    return _SEED_RUNNERS[config.kind](config, seed, train, test)


class ExperimentRunner:
    """Runs one sweep experiment over all seeds and aggregates the results"""

    def __init__(self, config: ExperimentConfig, train: Optional[ImageDataset] = None,
                 test: Optional[ImageDataset] = None):
        if not config.values and DEFAULT_SWEEP_VALUES[config.kind]:
            config = config.model_copy(update={"values": list(DEFAULT_SWEEP_VALUES[config.kind])})
        self.config = config
        self.logger = default_logger
        self._validate_values()
        self.train = train if train is not None else load_dataset(
            config.dataset, "train", config.n_train, seed=config.base_seed, data_dir=config.data_dir,
            n_classes=config.n_classes)
        self.test = test if test is not None else load_dataset(
            config.dataset, "test", config.n_test, seed=config.base_seed, data_dir=config.data_dir,
            n_classes=config.n_classes)

    def _validate_values(self) -> None:
        kind = self.config.kind
        try:
            if kind is ExperimentKind.LAYER_SWEEP:
                for value in self.config.values:
                    LayerTap.parse(value)
            elif kind is ExperimentKind.ALPHA_SWEEP:
                for value in self.config.values:
                    if not 0.0 <= float(value) <= 1.0:
                        raise ConfigError(f"alpha {value} outside [0, 1]")
            elif kind is ExperimentKind.EPOCH_SWEEP:
                if any(int(value) < 0 for value in self.config.values):
                    raise ConfigError("classifier epoch counts must be ≥ 0")
            elif kind is ExperimentKind.CONTROLS:
                unknown = set(self.config.values) - set(DEFAULT_SWEEP_VALUES[kind])
                if unknown:
                    raise ConfigError(f"Unknown controls {sorted(unknown)}; expected pass-through and/or constant")
        except ValueError as e:
            raise ConfigError(f"Invalid sweep value for {kind.value}: {e}")
        if kind is not ExperimentKind.LAYER_SWEEP:
            LayerTap.parse(self.config.tap)

    @property
    def seeds(self) -> List[int]:
        return [self.config.base_seed + i for i in range(self.config.seeds)]

    def run(self) -> SweepResult:
        config = self.config
        self.logger.info(
            f"Running {config.kind.value} over {config.values or 'fixed setup'} with {config.seeds} seed(s), "
            f"{len(self.train)} train / {len(self.test)} test images"
        )
        outcomes: List[SeedOutcome]
        if config.jobs > 1 and len(self.seeds) > 1:
            log_file = next((h.baseFilename for h in self.logger.handlers if isinstance(h, logging.FileHandler)), None)
            with ProcessPoolExecutor(max_workers=min(config.jobs, len(self.seeds)), initializer=configure_worker,
                                     initargs=(self.logger.level, log_file)) as pool:
                futures = [pool.submit(_run_seed, config, s, self.train, self.test) for s in self.seeds]
                outcomes = [f.result() for f in futures]
        else:
            outcomes = [_run_seed(config, s, self.train, self.test) for s in self.seeds]

        per_seed = [r for results, _ in outcomes for r in results]
        order = list(dict.fromkeys(r.sweep_value for r in per_seed))
        rows = [aggregate_runs([r for r in per_seed if r.sweep_value == value]) for value in order]
        for row in rows:
            self.logger.info(
                f"{config.kind.value} {row.sweep_value}: rec {row.rec_loss_cladec:.3f} vs {row.rec_loss_refae:.3f}, "
                f"acc {row.acc_eval_cladec:.3f} vs {row.acc_eval_refae:.3f}"
            )
        grids = outcomes[0][1] if outcomes else {}
        return SweepResult(kind=config.kind, rows=rows, per_seed=per_seed, grids=grids)

    def run_layer_sweep(self) -> SweepResult:
        return self._run_kind(ExperimentKind.LAYER_SWEEP)

    def run_alpha_sweep(self) -> SweepResult:
        return self._run_kind(ExperimentKind.ALPHA_SWEEP)

    def run_epoch_sweep(self) -> SweepResult:
        return self._run_kind(ExperimentKind.EPOCH_SWEEP)

    def run_untrained_encoder(self) -> SweepResult:
        return self._run_kind(ExperimentKind.UNTRAINED_ENCODER)

    def run_controls(self) -> SweepResult:
        return self._run_kind(ExperimentKind.CONTROLS)

    def _run_kind(self, kind: ExperimentKind) -> SweepResult:
        if self.config.kind is not kind:
            raise ConfigError(f"Runner configured for {self.config.kind.value}, not {kind.value}")
        return self.run()


def experiment_config(kind: str, **values: object) -> ExperimentConfig:
    """Validated ExperimentConfig (ConfigError on bad values)"""
    return validated(ExperimentConfig, kind=kind, **values)
