"""
Command line entry point for the ClaDec explainer

Every subcommand resolves its options as built-in defaults < CLADEC_*
environment < key=value config file < flags, writes its artifacts into a
per-run directory under --out-dir and finishes with a run manifest.
"""

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

# Add parent directory to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from config.settings import (  # noqa: E402
    SCALE_ALIASES, SCALE_PRESETS, load_config_file, parse_width_multiplier, settings,
)
from src.core import ops  # noqa: E402
from src.core.gradcheck import grad_check  # noqa: E402
from src.core.linear_theory import (  # noqa: E402
    alignment,
    anisotropic_samples,
    theory_demo,
    top_eigenvector,
    train_linear_autoencoder,
)
from src.core.models import (  # noqa: E402
    DEFAULT_LATENT_Z,
    ClaDecModel,
    LayerTap,
    build_refae,
)
from src.core.tensor import Tensor, debug_numerics, precision  # noqa: E402
from src.data.datasets import ImageDataset, load_dataset  # noqa: E402
from src.data.schemas import ExperimentConfig, LossVariant, TrainConfig, validated  # noqa: E402
from src.experiments.evaluation import ExperimentRunner, evaluate_models, experiment_config  # noqa: E402
from src.experiments.training import (  # noqa: E402
    derive_rng,
    train_cladec,
    train_classifier,
    train_refae,
)
from src.utils.checkpoint import (  # noqa: E402
    load_classifier,
    load_model,
    read_checkpoint,
    save_classifier,
    save_model,
)
from src.utils.errors import (  # noqa: E402
    ArtifactIOError,
    CladecError,
    ConfigError,
    MissingCheckpointError,
    NumericalError,
)
from src.utils.logger import default_logger, setup_logger  # noqa: E402
from src.utils.manifest import build_manifest, write_manifest  # noqa: E402
from src.utils.report import DEFAULT_GAIN, render_grid, write_metrics_table, write_ppm  # noqa: E402

DATASETS = ("synth", "mnist", "fashion-mnist")
SWEEP_KINDS = ("layer", "alpha", "epoch", "untrained", "controls")
GRID_ROWS = 8
THEORY_SAMPLES = 2000
GRAD_CHECK_COORDS = 4
GRAD_CHECK_TOLERANCE = 1e-3


def _parse_bool(value: str) -> bool:
    lowered = str(value).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"Expected a boolean (on/off), got {value!r}")


def _parse_latent(value: str) -> Optional[int]:
    lowered = str(value).strip().lower()
    if lowered in ("on", "true", "yes"):
        return DEFAULT_LATENT_Z
    if lowered in ("off", "false", "no", "none"):
        return None
    try:
        size = int(lowered)
    except ValueError:
        raise ConfigError(f"--latent-z must be on, off or a positive size, got {value!r}")
    if size < 1:
        raise ConfigError(f"--latent-z size must be positive, got {size}")
    return size


def _choice(options: Sequence[str]) -> Callable[[str], str]:
    def parse(value: str) -> str:
        if value not in options:
            raise ConfigError(f"Expected one of {', '.join(options)}, got {value!r}")
        return value
    return parse


def _parse_scale(value: str) -> str:
    return _choice(tuple(SCALE_PRESETS))(SCALE_ALIASES.get(value, value))


def _number(kind: Callable[[str], Any], name: str) -> Callable[[str], Any]:
    def parse(value: str) -> Any:
        try:
            return kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"Invalid value for {name}: {value!r}")
    return parse


def _csv_list(value: str) -> List[str]:
    return [v.strip() for v in str(value).split(",") if v.strip()]


# Converters shared by config-file values and flags
CONVERTERS: Dict[str, Callable[[str], Any]] = {
    "data_dir": Path,
    "out_dir": Path,
    "dataset": _choice(DATASETS),
    "tap": lambda v: LayerTap.parse(v.strip()).name,
    "alpha": _number(float, "alpha"),
    "epochs": _number(int, "epochs"),
    "seed": _number(int, "seed"),
    "seeds": _number(int, "seeds"),
    "scale": _parse_scale,
    "checkpoint": Path,
    "refae_checkpoint": Path,
    "loss_variant": lambda v: LossVariant(v.replace("-", "_")).value,
    "latent_z": _parse_latent,
    "jobs": _number(int, "jobs"),
    "samples": _number(int, "samples"),
    "gain": _number(float, "gain"),
    "width_multiplier": lambda v: str(parse_width_multiplier(v)),
    "n_train": _number(int, "n-train"),
    "n_test": _number(int, "n-test"),
    "batch_size": _number(int, "batch-size"),
    "learning_rate": _number(float, "learning-rate"),
    "precision": _choice(("float32", "float64")),
    "values": _csv_list,
    "log_level": lambda v: v.upper(),
    "eval_input_pairs": _parse_bool,
    "n_classes": _number(int, "n-classes"),
}


def _defaults() -> Dict[str, Any]:
    """Built-in defaults with the CLADEC_* environment already applied"""
    return {
        "data_dir": settings.data_dir,
        "out_dir": settings.out_dir,
        "dataset": "synth",
        "tap": "conv5",
        "alpha": 1.0,
        "seed": settings.seed,
        "scale": "desk",
        "checkpoint": None,
        "refae_checkpoint": None,
        "loss_variant": "classification",
        "latent_z": None,
        "jobs": settings.jobs,
        "gain": DEFAULT_GAIN,
        "batch_size": 64,
        "learning_rate": 1e-3,
        "precision": "float32",
        "values": [],
        "log_level": settings.log_level,
        "eval_input_pairs": False,
        "n_classes": 10,
    }


def resolve_options(args: argparse.Namespace) -> Dict[str, Any]:
    """Merge defaults, environment, config file and flags; fill scale-dependent gaps"""
    options = _defaults()
    if getattr(args, "config", None):
        for key, raw in load_config_file(args.config).items():
            options[key] = CONVERTERS[key](raw)
    for key, converter in CONVERTERS.items():
        raw = getattr(args, key, None)
        if raw is not None:
            options[key] = converter(raw)

    preset = SCALE_PRESETS[options["scale"]]
    for key in ("n_train", "n_test", "epochs", "seeds"):
        options.setdefault(key, preset[key])
    options.setdefault("width_multiplier", str(preset["width_multiplier"]))
    options.setdefault("samples", None)
    return options


@dataclass
class RunContext:
    """Per-invocation state: resolved options, run directory and produced files"""

    command: str
    options: Dict[str, Any]
    run_dir: Path
    inputs: List[Path] = field(default_factory=list)
    artifacts: List[Path] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)

    def produced(self, path: Path) -> Path:
        self.artifacts.append(Path(path))
        return Path(path)

    def timed(self, label: str, start: float) -> None:
        self.timings[label] = round(time.perf_counter() - start, 3)

    def finish(self) -> Path:
        snapshot = {k: (str(v) if isinstance(v, (Path, Fraction)) else v) for k, v in self.options.items()}
        manifest = build_manifest(self.command, int(self.options["seed"]), snapshot, inputs=self.inputs,
                                  artifacts=self.artifacts, timings=self.timings)
        return write_manifest(manifest, self.run_dir)


def _train_config(options: Dict[str, Any], **overrides: Any) -> TrainConfig:
    values = dict(
        epochs=options["epochs"], batch_size=options["batch_size"], learning_rate=options["learning_rate"],
        seed=options["seed"], precision=options["precision"], loss_variant=options["loss_variant"],
        alpha=options["alpha"], latent_z=options["latent_z"],
    )
    values.update(overrides)
    return validated(TrainConfig, **values)


def _experiment_config(options: Dict[str, Any], kind: str) -> ExperimentConfig:
    return experiment_config(
        kind,
        values=options["values"], seeds=options["seeds"], base_seed=options["seed"],
        dataset=options["dataset"], data_dir=str(options["data_dir"]), scale=options["scale"],
        n_train=options["n_train"], n_test=options["n_test"], n_classes=options["n_classes"],
        width_multiplier=options["width_multiplier"], epochs=options["epochs"],
        batch_size=options["batch_size"], learning_rate=options["learning_rate"],
        precision=options["precision"], tap=options["tap"], alpha=options["alpha"],
        loss_variant=options["loss_variant"], latent_z=options["latent_z"],
        eval_input_pairs=options["eval_input_pairs"], jobs=options["jobs"],
    )


def _load_splits(ctx: RunContext) -> Dict[str, ImageDataset]:
    options = ctx.options
    if options["dataset"] != "synth":
        ctx.inputs.append(Path(options["data_dir"]))
    return {
        split: load_dataset(options["dataset"], split, options[f"n_{split}"], seed=options["seed"],
                            data_dir=options["data_dir"], n_classes=options["n_classes"])
        for split in ("train", "test")
    }


def _require(path: Optional[Path], flag: str, command: str) -> Path:
    if path is None:
        raise MissingCheckpointError(f"{command} needs {flag} pointing at a checkpoint file")
    if not Path(path).exists():
        raise MissingCheckpointError(f"Checkpoint not found: {path}")
    return Path(path)


def cmd_train_classifier(ctx: RunContext) -> None:
    options = ctx.options
    data = _load_splits(ctx)
    start = time.perf_counter()
    result = train_classifier(data["train"], _train_config(options), val=data["test"],
                              width_multiplier=options["width_multiplier"])
    ctx.timed("train", start)
    ctx.produced(save_classifier(result.classifier, ctx.run_dir / "classifier.cldc", seed=options["seed"],
                                 metadata={"run_id": result.run_id, "dataset": options["dataset"]}))
    ctx.produced(result.history.write_csv(ctx.run_dir / "history.csv"))
    final = result.val_accuracy.get(options["epochs"], float("nan"))
    print(f"✅ Classifier {result.run_id}: test accuracy {final:.4f}")


def cmd_train_refae(ctx: RunContext) -> None:
    options = ctx.options
    data = _load_splits(ctx)
    start = time.perf_counter()
    result = train_refae(data["train"], options["tap"], _train_config(options), test=data["test"],
                         width_multiplier=options["width_multiplier"])
    ctx.timed("train", start)
    ctx.produced(save_model(result.model, ctx.run_dir / f"refae-{options['tap']}.cldc", seed=options["seed"],
                            metadata={"run_id": result.run_id}))
    ctx.produced(result.history.write_csv(ctx.run_dir / "history.csv"))
    print(f"✅ Reference autoencoder {result.run_id}: test reconstruction loss {result.final_test_loss:.4f}")


def cmd_train_cladec(ctx: RunContext) -> None:
    options = ctx.options
    path = _require(options["checkpoint"], "--checkpoint", "train-cladec")
    ctx.inputs.append(path)
    classifier = load_classifier(path)
    data = _load_splits(ctx)
    start = time.perf_counter()
    result = train_cladec(data["train"], classifier, options["tap"], _train_config(options), test=data["test"])
    ctx.timed("train", start)
    ctx.produced(save_model(result.model, ctx.run_dir / f"cladec-{options['tap']}.cldc", seed=options["seed"],
                            metadata={"run_id": result.run_id, "classifier": str(path)}))
    ctx.produced(result.history.write_csv(ctx.run_dir / "history.csv"))
    print(f"✅ ClaDec decoder {result.run_id}: test reconstruction loss {result.final_test_loss:.4f}")


def cmd_evaluate(ctx: RunContext) -> None:
    options = ctx.options
    cladec_path = _require(options["checkpoint"], "--checkpoint", "evaluate")
    refae_path = _require(options["refae_checkpoint"], "--refae-checkpoint", "evaluate")
    ctx.inputs.extend([cladec_path, refae_path])
    cladec, refae = load_model(cladec_path), load_model(refae_path)
    if not isinstance(cladec, ClaDecModel):
        raise ConfigError(f"{cladec_path} holds a {cladec.kind} model; --checkpoint must be a ClaDec model")
    data = _load_splits(ctx)
    config = _experiment_config({**options, "seeds": 1, "tap": cladec.tap.name}, "layer")
    start = time.perf_counter()
    row = evaluate_models(config, options["seed"], data["train"], data["test"], cladec, refae)
    ctx.timed("evaluate", start)
    ctx.produced(write_metrics_table([row], ctx.run_dir / "metrics.csv", title=f"Evaluation at {cladec.tap}"))
    print(f"✅ {row.sweep_value}: Δrec {row.delta_rec:.3f}, Δacc {row.delta_acc:.3f}")


def cmd_sweep(ctx: RunContext, kind: str) -> None:
    options = ctx.options
    config = _experiment_config(options, kind)
    runner = ExperimentRunner(config)
    start = time.perf_counter()
    result = runner.run()
    ctx.timed("sweep", start)
    ctx.produced(write_metrics_table(result.rows, ctx.run_dir / "metrics.csv", title=config.kind.value))
    ctx.artifacts.append(ctx.run_dir / "metrics.txt")
    per_seed = ctx.run_dir / "per_seed.csv"
    result.per_seed_frame().to_csv(per_seed, index=False)
    ctx.produced(per_seed)
    for value, grid in result.grids.items():
        ctx.produced(write_ppm(grid, ctx.run_dir / f"grid-{value}.ppm"))
    print(f"✅ {config.kind.value}: {len(result.rows)} row(s) over {config.seeds} seed(s) → {ctx.run_dir}")


def cmd_explain(ctx: RunContext) -> None:
    """Grid of originals, reference reconstructions, explanations and their differences"""
    options = ctx.options
    path = _require(options["checkpoint"], "--checkpoint", "explain")
    ctx.inputs.append(path)
    data = _load_splits(ctx)
    config = _train_config(options)

    if read_checkpoint(path).kind == "classifier":
        classifier = load_classifier(path)
        cladec = train_cladec(data["train"], classifier, options["tap"], config, test=data["test"]).model
    else:
        cladec = load_model(path)
        if not isinstance(cladec, ClaDecModel):
            raise ConfigError(f"{path} holds a {cladec.kind} model; expected a classifier or ClaDec checkpoint")

    if options["refae_checkpoint"] is not None:
        refae_path = _require(options["refae_checkpoint"], "--refae-checkpoint", "explain")
        ctx.inputs.append(refae_path)
        refae = load_model(refae_path)
    else:
        refae = train_refae(data["train"], cladec.tap, config, test=data["test"],
                            width_multiplier=cladec.encoder.width_multiplier).model

    rows = options["samples"] or GRID_ROWS
    indices = np.arange(min(rows, len(data["test"])))
    grid = render_grid(refae, cladec, data["test"], indices, gain=options["gain"])
    ctx.produced(write_ppm(grid, ctx.run_dir / f"explain-{cladec.tap}.ppm"))
    correct = sum(row.correct for row in grid.rows)
    print(f"✅ Explained {len(grid)} images at {cladec.tap} ({correct} classified correctly)")


def cmd_theory_demo(ctx: RunContext, args: argparse.Namespace) -> None:
    options = ctx.options
    variances = [float(v) for v in _csv_list(args.lambdas)] if args.lambdas else [4.0, 1.0]
    if args.dim is not None and args.dim != len(variances):
        raise ConfigError(f"--dim {args.dim} does not match {len(variances)} --lambda values")
    encoders = args.encoder or ["u1", "u2"]
    n = options["samples"] or THEORY_SAMPLES

    samples = anisotropic_samples(variances, n, seed=options["seed"])
    sigma = np.diag(variances)
    table, scatter = theory_demo(samples, encoders, covariance=sigma)
    table.to_csv(ctx.run_dir / "theory.csv", index=False)
    scatter.to_csv(ctx.run_dir / "theory_scatter.csv", index=False)
    ctx.produced(ctx.run_dir / "theory.csv")
    ctx.produced(ctx.run_dir / "theory_scatter.csv")

    trained = train_linear_autoencoder(samples, seed=options["seed"])
    _, u1 = top_eigenvector(sigma)
    print(f"✅ Theory table for {len(table)} encoder(s); trained linear AE |cos(E, u1)| = "
          f"{alignment(trained.encoder, u1):.4f}")


def cmd_grad_check(ctx: RunContext) -> None:
    """Finite-difference check of a tiny encoder/decoder stack at the chosen tap"""
    options = ctx.options
    coords = options["samples"] or GRAD_CHECK_COORDS
    with precision("float64"):
        model = build_refae(options["tap"], options["n_classes"], "1/8",
                            rng=derive_rng(options["seed"], "grad-check"), latent_z=options["latent_z"])
        images = Tensor(np.random.default_rng(options["seed"]).uniform(0.0, 1.0, size=(2, 1, 32, 32)))

        def loss() -> Tensor:
            return ops.mse_loss(model.forward(images), images)
        report = grad_check(loss, model.trainable_parameters(), samples=coords, seed=options["seed"])

    per_param = {name: round(err, 10) for name, err in report.per_param.items()}
    report_path = ctx.run_dir / "grad_check.json"
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps({"max_rel_error": report.max_rel_error, "checked": report.checked,
                                       "skipped": report.skipped, "per_param": per_param}, indent=2))
    ctx.produced(report_path)
    if not report.passed(GRAD_CHECK_TOLERANCE):
        raise NumericalError(f"Gradient check failed: max relative error {report.max_rel_error:.3e}")
    print(f"✅ Gradients match finite differences: max relative error {report.max_rel_error:.2e} "
          f"({report.checked} checked, {report.skipped} skipped)")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key=value config file (flags win over it)")
    parser.add_argument("--data-dir", dest="data_dir", help="Directory holding the IDX files")
    parser.add_argument("--dataset", help=f"One of {', '.join(DATASETS)}")
    parser.add_argument("--tap", help="Classifier stage to explain (logits, conv5..conv1 or -1..-6)")
    parser.add_argument("--alpha", help="Weight of the reconstruction term in the decoder loss")
    parser.add_argument("--epochs", help="Training epochs")
    parser.add_argument("--seed", help="Base seed (default CLADEC_SEED)")
    parser.add_argument("--seeds", help="Number of seeds for sweeps")
    parser.add_argument("--scale", help="Scale preset: desk or paper (alias full)")
    parser.add_argument("--out-dir", dest="out_dir", help="Root directory for run outputs")
    parser.add_argument("--checkpoint", help="Input checkpoint (classifier or ClaDec model)")
    parser.add_argument("--refae-checkpoint", dest="refae_checkpoint", help="Reference autoencoder checkpoint")
    parser.add_argument("--loss-variant", dest="loss_variant", help="classification or layer-recon")
    parser.add_argument("--latent-z", dest="latent_z", help="Dense bottleneck in the decoder: on, off or a size")
    parser.add_argument("--jobs", help="Parallel seed workers for sweeps")
    parser.add_argument("--samples", help="Grid rows, theory samples or coordinates per tensor")
    parser.add_argument("--gain", help="Difference map gain")
    parser.add_argument("--values", help="Comma-separated sweep values")
    parser.add_argument("--precision", help="float32 or float64")
    parser.add_argument("--width-multiplier", dest="width_multiplier", help="Channel width multiplier, e.g. 1/2")
    parser.add_argument("--n-train", dest="n_train", help="Training images")
    parser.add_argument("--n-test", dest="n_test", help="Test images")
    parser.add_argument("--batch-size", dest="batch_size", help="Mini-batch size")
    parser.add_argument("--learning-rate", dest="learning_rate", help="Adam learning rate")
    parser.add_argument("--n-classes", dest="n_classes", help="Number of classes")
    parser.add_argument("--eval-input-pairs", dest="eval_input_pairs",
                        help="Also train evaluation classifiers on original images (on/off)")
    parser.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING or ERROR")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cladec", description="Classifier-decoder explanations")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("train-classifier", "Train the classifier to be explained"),
        ("train-refae", "Train the reference autoencoder at a tap"),
        ("train-cladec", "Train a decoder on a frozen classifier's tap"),
        ("evaluate", "Measure a ClaDec/reference pair"),
        ("explain", "Render original | reference | explanation | difference grids"),
        ("grad-check", "Check gradients against finite differences"),
    ):
        _add_common(commands.add_parser(name, help=help_text))

    sweep = commands.add_parser("sweep", help="Run a multi-seed experiment, including input controls")
    sweep.add_argument("kind", choices=SWEEP_KINDS)
    _add_common(sweep)

    theory = commands.add_parser("theory-demo", help="Closed-form linear autoencoder demo")
    _add_common(theory)
    theory.add_argument("--dim", type=int, help="Data dimension (must match --lambda)")
    theory.add_argument("--lambda", dest="lambdas", help="Comma-separated variances, e.g. 4,1")
    theory.add_argument("--encoder", action="append",
                        help="Encoder u<k> or comma-separated vector; repeatable")
    return parser


def _run_dir(command: str, args: argparse.Namespace, options: Dict[str, Any]) -> Path:
    label = command if command != "sweep" else f"sweep-{args.kind}"
    if command in ("train-refae", "train-cladec", "explain", "grad-check"):
        label += f"-{options['tap']}"
    return Path(options["out_dir"]) / f"{label}-seed{options['seed']}"


def dispatch(args: argparse.Namespace, command_line: str = "") -> None:
    options = resolve_options(args)
    setup_logger("cladec", options["log_level"], settings.log_file)
    debug_numerics(settings.debug_numerics)
    ctx = RunContext(command=command_line or args.command, options=options,
                     run_dir=_run_dir(args.command, args, options))
    try:
        ctx.run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ArtifactIOError(f"Cannot create run directory {ctx.run_dir}: {e}")
    if args.config:
        ctx.inputs.append(Path(args.config))

    handlers: Dict[str, Callable[[], None]] = {
        "train-classifier": lambda: cmd_train_classifier(ctx),
        "train-refae": lambda: cmd_train_refae(ctx),
        "train-cladec": lambda: cmd_train_cladec(ctx),
        "evaluate": lambda: cmd_evaluate(ctx),
        "sweep": lambda: cmd_sweep(ctx, args.kind),
        "explain": lambda: cmd_explain(ctx),
        "theory-demo": lambda: cmd_theory_demo(ctx, args),
        "grad-check": lambda: cmd_grad_check(ctx),
    }
    start = time.perf_counter()
    handlers[args.command]()
    ctx.timed("total", start)
    ctx.finish()


def _report_error(category: str, message: str) -> None:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand and return the process exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)
    logger = default_logger
    try:
        setup_logger("cladec", settings.log_level, settings.log_file)
        dispatch(args, " ".join(argv if argv is not None else sys.argv[1:]))
        return 0
    except CladecError as e:
        logger.error(f"{args.command} failed ({e.category}): {e}")
        _report_error(e.category, str(e))
        return e.exit_code
    except OSError as e:
        logger.error(f"{args.command} failed (io): {e}")
        _report_error(ArtifactIOError.category, str(e))
        return ArtifactIOError.exit_code


if __name__ == "__main__":
    sys.exit(main())
