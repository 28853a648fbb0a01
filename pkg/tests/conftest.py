from pathlib import Path

import numpy as np
import pytest

from surfalign import mesh as M
from surfalign import shapes

DATA = Path(__file__).parent / "data"

SHIPPED = ["cube", "icosphere1", "icosphere2", "icosphere3", "torus", "ellipsoid3"]


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def shipped():
    return {name: M.load_mesh(DATA / f"{name}.obj") for name in SHIPPED}


@pytest.fixture(scope="session")
def cube():
    return shapes.cube()


@pytest.fixture(scope="session")
def ico1():
    return shapes.icosphere(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
