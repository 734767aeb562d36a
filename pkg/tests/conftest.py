import numpy as np
import pytest

from pdfem.assembly import Discretization
from pdfem.geometry import Box, build_uniform_mesh
from pdfem.potential import PotentialSpec


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def disc_1d():
    """50 interior nodes on [0, 1], horizon 0.1, c = beta = 1."""
    mesh = build_uniform_mesh(Box.unit(1), 1.0 / 51)
    return Discretization.build(mesh, PotentialSpec(1.0, 1.0, "linear_decay", 1), 0.1)


@pytest.fixture(scope="session")
def disc_2d():
    mesh = build_uniform_mesh(Box.unit(2), 1.0 / 8)
    return Discretization.build(mesh, PotentialSpec(1.0, 1.0, "linear_decay", 2), 0.3)


def random_interior(disc, rng, scale=1.0):
    U = scale * rng.standard_normal((disc.mesh.n_nodes, disc.d))
    U[disc.mesh.boundary_node] = 0.0
    return U


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
