from __future__ import annotations

import logging

import pytest

from dsvdistill.logging import ROOT_LOGGER, format_terms, get_logger, resolve_level, setup_logging


@pytest.fixture(autouse=True)
def _reset_handlers():
    yield
    logging.getLogger(ROOT_LOGGER).handlers.clear()


@pytest.mark.parametrize(
    "level,verbose,quiet,expected",
    [
        ("WARNING", 0, False, logging.WARNING),
        ("warning", 1, False, logging.INFO),
        ("INFO", 2, False, logging.DEBUG),
        ("DEBUG", 2, True, logging.ERROR),
        ("LOUD", 0, False, logging.INFO),
    ],
)
def test_flags_override_configured_level(level, verbose, quiet, expected):
    assert resolve_level(level, verbose, quiet) == expected


def test_setup_installs_one_handler():
    setup_logging("INFO")
    logger = setup_logging("DEBUG")
    assert logger.name == ROOT_LOGGER
    assert len(logger.handlers) == 1
    assert "%(asctime)s" in logger.handlers[0].formatter._fmt
    assert get_logger("engine").name == "dsvdistill.engine"


def test_format_terms_skips_missing_values():
    assert format_terms(total=1.5, stat=None, dm=0.25) == "total=1.500000 dm=0.250000"
    assert format_terms() == ""
