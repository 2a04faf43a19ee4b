"""
Logging for the ClaDec explainer

Everything logs through the "cladec" logger: rich output on stderr, plus an
optional plain-text file (CLADEC_LOG_FILE). Sweep worker processes rebuild the
same handlers through configure_worker().
"""

import logging
import sys
from pathlib import Path
from typing import Optional, Union

from rich.console import Console
from rich.logging import RichHandler

from .errors import ConfigError

ROOT_LOGGER = "cladec"
LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

PLAIN_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
FILE_FORMAT = "%(asctime)s - %(processName)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s"


def parse_level(level: Union[str, int]) -> int:
    """Map a level name (any case) or number onto a logging level"""
    if isinstance(level, int):
        return level
    name = str(level).strip().upper()
    if name not in LEVELS:
        raise ConfigError(f"Unknown log level {level!r}; expected one of {', '.join(LEVELS)}")
    return int(getattr(logging, name))


def _console_handler(enable_rich: bool) -> logging.Handler:
    if not enable_rich:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(PLAIN_FORMAT))
        return handler
    return RichHandler(console=Console(stderr=True), show_time=True, show_path=False,
                       markup=False, rich_tracebacks=True)


def _file_handler(log_file: Path) -> logging.Handler:
    log_file.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(log_file, encoding="utf-8")
    handler.setFormatter(logging.Formatter(FILE_FORMAT))
    return handler


def setup_logger(
    name: str = ROOT_LOGGER,
    level: Union[str, int] = "INFO",
    log_file: Optional[Union[str, Path]] = None,
    enable_rich: bool = True
) -> logging.Logger:
    """
    Set up a logger with rich console output and optional file output

    Calling it again replaces the handlers, so the CLI can raise or lower the
    level once options are resolved.

    Args:
        name: Logger name
        level: DEBUG, INFO, WARNING, ERROR or CRITICAL
        log_file: Optional log file path
        enable_rich: Whether to use rich formatting

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(parse_level(level))

    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    logger.addHandler(_console_handler(enable_rich))
    if log_file:
        logger.addHandler(_file_handler(Path(log_file)))

    logger.propagate = False
    return logger


def configure_worker(level: Union[str, int], log_file: Optional[str] = None) -> None:
    """Process-pool initializer: give a sweep worker the parent's level and file"""
    setup_logger(ROOT_LOGGER, level, log_file)


# Default logger instance
default_logger = setup_logger(ROOT_LOGGER)
