"""Fixtures: a stub-backed registry and an in-process HTTP client."""
from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from pydetect import ModelRegistry, create_app
from pydetect.testing import MeanAbsMetric, StaticDetector

import service_helpers
from service_helpers import CANNED


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not service_helpers.ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria (detector server)")
    for line in service_helpers.ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture()
def registry() -> ModelRegistry:
    reg = ModelRegistry()
    reg.register(StaticDetector("stub-main", CANNED), aliases=("stub-main.pt",))
    reg.register(StaticDetector("stub-empty", ()))
    reg.register_metric(MeanAbsMetric())
    return reg


@pytest.fixture()
def client(registry: ModelRegistry) -> TestClient:
    return TestClient(create_app(registry))
