"""Logging setup for the ``dsvdistill`` logger tree."""

from __future__ import annotations

import logging
import sys
from typing import Optional

LEVELS = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARNING": logging.WARNING,
    "ERROR": logging.ERROR,
}

ROOT_LOGGER = "dsvdistill"
DEBUG_FORMAT = "[%(asctime)s] %(levelname)-8s [%(name)s] %(message)s"
PLAIN_FORMAT = "%(levelname)-8s %(message)s"


def resolve_level(level: str = "INFO", verbose: int = 0, quiet: bool = False) -> int:
    """Command-line flags win over the configured ``log_level``."""
    if quiet:
        return logging.ERROR
    if verbose >= 2:
        return logging.DEBUG
    if verbose == 1:
        return logging.INFO
    return LEVELS.get(level.upper(), logging.INFO)


def setup_logging(level: str = "INFO", verbose: int = 0, quiet: bool = False) -> logging.Logger:
    """
    Route the package loggers to stdout.

    Args:
        level: Configured level name (DEBUG, INFO, WARNING, ERROR)
        verbose: ``-v`` count; 1 selects INFO, 2 or more DEBUG
        quiet: Only report errors

    Returns:
        The package root logger
    """
    effective = resolve_level(level, verbose, quiet)
    logger = logging.getLogger(ROOT_LOGGER)
    logger.setLevel(effective)
    logger.handlers.clear()

    handler = logging.StreamHandler(sys.stdout)
    handler.setLevel(effective)
    if effective <= logging.DEBUG:
        handler.setFormatter(logging.Formatter(DEBUG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S"))
    else:
        handler.setFormatter(logging.Formatter(PLAIN_FORMAT))
    logger.addHandler(handler)
    return logger


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """Child logger ``dsvdistill.<name>``, or the package logger itself."""
    if name:
        return logging.getLogger(f"{ROOT_LOGGER}.{name}")
    return logging.getLogger(ROOT_LOGGER)


def format_terms(**terms: float | None) -> str:
    """``name=value`` pairs in argument order; ``None`` entries are left out."""
    return " ".join(f"{name}={value:.6f}" for name, value in terms.items() if value is not None)
