import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from weatherbias.data import ClassSet
from weatherbias.detector import AnchorConfig, Architecture

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def fixture_path(name):
    return os.path.join(FIXTURES, name)


def fixture_bytes(name):
    with open(fixture_path(name), "rb") as fh:
        return fh.read()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_arch():
    """16x16 input, 2x2 anchor grid, two classes: a few hundred parameters."""
    return Architecture(16, (2, 3, 3), 2, AnchorConfig(grid=2))


@pytest.fixture
def two_classes():
    return ClassSet(("car", "bus"))


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
