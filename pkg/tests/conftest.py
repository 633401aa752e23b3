import numpy as np
import pytest

from shycoupling.certificates import build_planar_certificate, select_simple_certificate
from shycoupling.geometry import Ball, Polygon


@pytest.fixture(scope="session")
def disc():
    return Ball((0.0, 0.0), 1.0)


@pytest.fixture(scope="session")
def square():
    return Polygon.square(2.0)


@pytest.fixture(scope="session")
def unit_square():
    return Polygon.square(1.0, center=(0.5, 0.5))


@pytest.fixture(scope="session")
def disc_cert(disc):
    return select_simple_certificate(disc, 0.5, (2.0, 0.0))


@pytest.fixture(scope="session")
def square_cert(square):
    return build_planar_certificate(square, 0.5, 100.0, 1.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def acceptance(pytestconfig):
    """Record one PASS/FAIL line per criterion; the lines are echoed in the terminal summary."""

    def report(number, title, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        pytestconfig.acceptance_lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines):
            terminalreporter.write_line(line)
