"""
Data schemas for the ClaDec explainer

Pydantic models for run configuration, metrics rows and run manifests, plus
the fixed column layouts of the CSV files every run writes.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..utils.errors import ConfigError


class ExperimentKind(Enum):
    """Sweep experiments"""
    LAYER_SWEEP = "layer_sweep"
    ALPHA_SWEEP = "alpha_sweep"
    EPOCH_SWEEP = "epoch_sweep"
    UNTRAINED_ENCODER = "untrained_encoder"
    CONTROLS = "controls"


class DatasetOrigin(Enum):
    """Where the images of a dataset come from"""
    ORIGINAL = "original"
    RECONSTRUCTION = "reconstruction"
    CONTROL = "control"


class LossVariant(Enum):
    """Secondary term of the ClaDec decoder objective"""
    CLASSIFICATION = "classification"
    LAYER_RECON = "layer_recon"


@dataclass
class TableSchema:
    """Column layout of a CSV artifact"""
    name: str
    columns: List[str]
    description: str = ""


TRAINING_HISTORY = TableSchema(
    name="training_history",
    description="One row per training epoch",
    columns=[
        "run_id",
        "seed",
        "epoch",
        "loss_total",
        "loss_rec",
        "loss_secondary",
        "val_metric",
    ],
)

METRICS_TABLE = TableSchema(
    name="metrics",
    description="One row per sweep point, aggregated over seeds",
    columns=[
        "sweep_value",
        "n_seeds",
        "rec_loss_cladec",
        "rec_loss_cladec_std",
        "rec_loss_refae",
        "rec_loss_refae_std",
        "delta_rec",
        "acc_eval_cladec",
        "acc_eval_cladec_std",
        "acc_eval_refae",
        "acc_eval_refae_std",
        "delta_acc",
        "secondary_cladec",
        "encoder_val_acc",
    ],
)

ModelT = TypeVar("ModelT", bound=BaseModel)


def validated(model: Type[ModelT], **values: Any) -> ModelT:
    """Build a pydantic model, turning validation failures into ConfigError"""
    try:
        return model(**values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or model.__name__}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid {model.__name__}: {problems}")


class TrainConfig(BaseModel):
    """Hyperparameters of one training procedure"""

    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=8, ge=0)
    batch_size: int = Field(default=64, ge=2)
    learning_rate: float = Field(default=1e-3, gt=0)
    seed: int = Field(default=0, ge=0)
    precision: str = "float32"
    loss_variant: LossVariant = LossVariant.CLASSIFICATION
    alpha: float = Field(default=1.0, ge=0.0, le=1.0)
    latent_z: Optional[int] = Field(default=None, ge=1)
    snapshot_epochs: List[int] = Field(default_factory=list)

    @field_validator("precision")
    @classmethod
    def _check_precision(cls, value: str) -> str:
        if value not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")
        return value

    @field_validator("loss_variant", mode="before")
    @classmethod
    def _normalize_variant(cls, value: Any) -> Any:
        return value.replace("-", "_") if isinstance(value, str) else value

    @field_validator("snapshot_epochs")
    @classmethod
    def _check_snapshots(cls, value: List[int]) -> List[int]:
        if any(k < 0 for k in value):
            raise ValueError("snapshot epochs must be ≥ 0")
        return sorted(set(value))


class ExperimentConfig(BaseModel):
    """One sweep experiment: what to vary, over how many seeds, at which scale"""

    model_config = ConfigDict(extra="forbid")

    kind: ExperimentKind
    values: List[str] = Field(default_factory=list)
    seeds: int = Field(default=3, ge=1)
    base_seed: int = Field(default=0, ge=0)
    dataset: str = "synth"
    data_dir: str = "data"
    scale: str = "desk"
    n_train: int = Field(default=8000, ge=2)
    n_test: int = Field(default=2000, ge=1)
    n_classes: int = Field(default=10, ge=2, le=10)
    width_multiplier: str = "1/2"
    epochs: int = Field(default=8, ge=1)
    batch_size: int = Field(default=64, ge=2)
    learning_rate: float = Field(default=1e-3, gt=0)
    precision: str = "float32"
    tap: str = "conv5"
    alpha: float = Field(default=1.0, ge=0.0, le=1.0)
    loss_variant: LossVariant = LossVariant.CLASSIFICATION
    latent_z: Optional[int] = Field(default=None, ge=1)
    eval_input_pairs: bool = False
    jobs: int = Field(default=1, ge=1)

    @field_validator("kind", mode="before")
    @classmethod
    def _normalize_kind(cls, value: Any) -> Any:
        if isinstance(value, str):
            value = value.replace("-", "_")
            return value if value.endswith(("_sweep", "_encoder")) else {
                "layer": "layer_sweep", "alpha": "alpha_sweep",
                "epoch": "epoch_sweep", "untrained": "untrained_encoder",
            }.get(value, value)
        return value

    @field_validator("loss_variant", mode="before")
    @classmethod
    def _normalize_variant(cls, value: Any) -> Any:
        return value.replace("-", "_") if isinstance(value, str) else value

    def train_config(self, seed: int, **overrides: Any) -> TrainConfig:
        values: Dict[str, Any] = dict(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            seed=seed, precision=self.precision, loss_variant=self.loss_variant,
            alpha=self.alpha, latent_z=self.latent_z,
        )
        values.update(overrides)
        return validated(TrainConfig, **values)


class MetricsRow(BaseModel):
    """Aggregated fidelity/interpretability metrics of one sweep point"""

    sweep_value: str
    n_seeds: int = Field(ge=1)
    rec_loss_cladec: float
    rec_loss_cladec_std: Optional[float] = Field(default=None, ge=0)
    rec_loss_refae: float
    rec_loss_refae_std: Optional[float] = Field(default=None, ge=0)
    delta_rec: float
    acc_eval_cladec: float
    acc_eval_cladec_std: Optional[float] = Field(default=None, ge=0)
    acc_eval_refae: float
    acc_eval_refae_std: Optional[float] = Field(default=None, ge=0)
    delta_acc: float
    secondary_cladec: Optional[float] = None
    encoder_val_acc: Optional[float] = None

    @model_validator(mode="after")
    def _check_deltas(self) -> "MetricsRow":
        if abs(self.delta_rec - (self.rec_loss_cladec - self.rec_loss_refae)) > 1e-9:
            raise ValueError("delta_rec must equal rec_loss_cladec - rec_loss_refae")
        if abs(self.delta_acc - (self.acc_eval_cladec - self.acc_eval_refae)) > 1e-9:
            raise ValueError("delta_acc must equal acc_eval_cladec - acc_eval_refae")
        return self

    @property
    def has_std(self) -> bool:
        return self.n_seeds >= 2 and self.rec_loss_cladec_std is not None


class EpochMetrics(BaseModel):
    """One row of a training history"""

    run_id: str
    seed: int
    epoch: int = Field(ge=0)
    loss_total: float
    loss_rec: Optional[float] = None
    loss_secondary: Optional[float] = None
    val_metric: Optional[float] = None


class RunManifest(BaseModel):
    """Record of one CLI invocation: inputs, config, outputs and timings"""

    command: str
    seed: int
    config: Dict[str, Any]
    config_hash: str
    input_hashes: Dict[str, str] = Field(default_factory=dict)
    artifacts: List[str] = Field(default_factory=list)
    timings: Dict[str, float] = Field(default_factory=dict)
    created_at: str
