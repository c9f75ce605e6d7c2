import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from measboltz.kernel import hard_spheres
from measboltz.measure import DiscreteMeasure

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def hs3():
    return hard_spheres(3)


@pytest.fixture(scope="session")
def two_atom():
    return DiscreteMeasure(3, [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], [0.5, 0.5])


def random_measure(rng, dim=3, atoms=5, scale=1.5, signed=False):
    v = rng.normal(scale=scale, size=(atoms, dim))
    w = rng.uniform(0.1, 1.0, atoms)
    if signed:
        w *= rng.choice([-1.0, 1.0], atoms)
    return v, w
