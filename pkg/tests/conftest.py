import os

import hypothesis
import numpy as np
import pytest

from floatbase.kinematics import random_configuration
from floatbase.library import chain5, double_pendulum, human3, twin_arm

hypothesis.settings.register_profile("default", deadline=None, max_examples=25)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=5)
hypothesis.settings.register_profile("ci", deadline=None, max_examples=100, derandomize=True)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def chain():
    return chain5()


@pytest.fixture(scope="session")
def pendulum():
    return double_pendulum()


@pytest.fixture(scope="session")
def human():
    return human3()


@pytest.fixture(scope="session")
def arm():
    return twin_arm()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_state(model, rng, scale=1.0):
    """Random configuration, velocity and acceleration."""
    q = random_configuration(model, rng, scale)
    return q, rng.normal(size=model.nv), rng.normal(size=model.nv)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
