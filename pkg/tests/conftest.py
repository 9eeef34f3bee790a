import numpy as np
import pytest

from relightkit.baker import bake_all
from relightkit.fixtures import constant_env, smooth_env


@pytest.fixture(scope="session")
def const_env():
    return constant_env(64)


@pytest.fixture(scope="session")
def sky_env():
    return smooth_env(32)


@pytest.fixture(scope="session")
def const_lights():
    return bake_all(constant_env(64), resolution=(32, 16))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit_vectors(rng, count):
    v = rng.normal(size=(count, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
