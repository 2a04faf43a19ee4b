"""
Configuration settings for the ClaDec explainer
"""

from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.utils.errors import ConfigError


class Settings(BaseSettings):
    """Application settings from CLADEC_* environment variables and .env"""

    model_config = SettingsConfigDict(
        env_prefix="CLADEC_", env_file=".env", extra="ignore"
    )

    seed: int = Field(default=0, ge=0)
    log_level: str = "INFO"
    log_file: Optional[Path] = None
    data_dir: Path = Path("data")
    out_dir: Path = Path("runs")
    jobs: int = Field(default=1, ge=1)
    debug_numerics: bool = False


# Experiment scale presets; "desk" fits a laptop CPU, "paper" is the full protocol
SCALE_PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {
        "n_train": 8000,
        "n_test": 2000,
        "width_multiplier": Fraction(1, 2),
        "epochs": 8,
        "seeds": 3,
    },
    "paper": {
        "n_train": 60000,
        "n_test": 10000,
        "width_multiplier": Fraction(1),
        "epochs": 64,
        "seeds": 5,
    },
}

SCALE_ALIASES = {"full": "paper"}

# Keys accepted in key=value config files (same names as the CLI flags)
CONFIG_KEYS = {
    "data_dir", "dataset", "tap", "alpha", "epochs", "seed", "seeds", "scale",
    "out_dir", "checkpoint", "refae_checkpoint", "loss_variant", "latent_z",
    "jobs", "samples", "gain", "width_multiplier", "n_train", "n_test",
    "batch_size", "learning_rate", "precision", "values", "log_level",
    "eval_input_pairs", "n_classes",
}


def load_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """
    Parse a flat key=value config file

    Blank lines and lines starting with '#' are ignored. Keys may be written
    with dashes or underscores. Values stay strings; the CLI converts them with
    the same parsers it uses for flags.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")

    values: Dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def parse_width_multiplier(value: Union[str, float, Fraction]) -> Fraction:
    """Parse '1/2', '0.25' or a number into an exact fraction"""
    try:
        multiplier = Fraction(str(value)).limit_denominator(1024)
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigError(f"Invalid width multiplier {value!r}: {e}")
    if multiplier <= 0:
        raise ConfigError(f"Width multiplier must be positive, got {value!r}")
    return multiplier


# Global settings instance
settings = Settings()
