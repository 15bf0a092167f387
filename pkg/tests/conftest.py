import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from membrane import CoefficientField, build_mesh_1d

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def figure1_mesh(cells=200, tau=(2 / 3, 1 / 3), b=(1.0, 1.0), outer=(0.0, 0.0)):
    return build_mesh_1d((-1.0, 0.0, 1.0), cells, [(tau[0], tau[1], b[0], b[1])], outer)


@pytest.fixture
def fig1():
    mesh = figure1_mesh()
    return mesh, CoefficientField.per_subdomain(mesh)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
