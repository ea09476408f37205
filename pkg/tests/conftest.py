import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cycleflow import OrientedGraph
from cycleflow.generators import make_rng
from cycleflow.io import fixture_path, ieee30_graph, load_fixture

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "cycleflow",
    deadline=None,
    derandomize=True,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("cycleflow")

SCENARIO_1 = np.array([32, 0, 0, 50, 0, 0, 0, 0, -52, 0, -30])
SCENARIO_2 = np.array([15, 0, 0, 30, 0, 0, 0, 0, -15, 0, -30])


@pytest.fixture
def rng():
    """Generator seeded from CYCLEFLOW_SEED (0 when unset)."""
    return make_rng()


@pytest.fixture
def triangle():
    # e1 = (v1, v2), e2 = (v2, v3), e3 = (v1, v3)
    return OrientedGraph(3, ((0, 1), (1, 2), (0, 2)))


@pytest.fixture
def two_triangles():
    # triangles {v1, v2, v3} and {v2, v3, v4} sharing arc e2 = (v2, v3)
    return OrientedGraph(4, ((0, 1), (1, 2), (2, 0), (1, 3), (3, 2)))


@pytest.fixture(scope="session")
def ieee30():
    return ieee30_graph()


@pytest.fixture(scope="session")
def example_problem():
    return load_fixture("paper_example")


@pytest.fixture(scope="session")
def data_dir():
    return fixture_path("ieee30").parent


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
