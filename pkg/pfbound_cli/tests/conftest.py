"""Shared pytest fixtures."""

import pytest

from pfbound_cli.logger import Logger


@pytest.fixture(autouse=True)
def reset_log_file():
    """Commands point the shared log at their output directory; undo that after each test."""
    yield
    Logger.set_log_file(None)


@pytest.fixture
def synth_source():
    return "synth:{d: 5, n: 3, T: 1000, seed: 0}"
