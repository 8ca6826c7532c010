import numpy as np
import pytest

from xfemoc.geometry import CornerGeometry
from xfemoc.mesh import build_structured_crack_mesh, build_three_quarter_disk_mesh


@pytest.fixture(scope="session")
def crack_geom():
    return CornerGeometry.crack_square()


@pytest.fixture(scope="session")
def disk_geom():
    return CornerGeometry.three_quarter_disk()


@pytest.fixture(scope="session")
def mesh9():
    return build_structured_crack_mesh(9)


@pytest.fixture(scope="session")
def mesh10_fitted():
    return build_structured_crack_mesh(10, fitted=True)


@pytest.fixture(scope="session")
def disk_mesh():
    return build_three_quarter_disk_mesh(0.25)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in mod.LINES:
            terminalreporter.write_line(line)
