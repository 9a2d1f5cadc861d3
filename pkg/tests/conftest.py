"""Shared fixtures and the acceptance summary hook."""
from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import criteria


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not criteria.ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in criteria.ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture()
def synthetic_scenario():
    from corpus import scenario_32

    return scenario_32()


@pytest.fixture()
def synthetic_image(synthetic_scenario):
    from corpus import image_32

    return image_32(0, synthetic_scenario)
