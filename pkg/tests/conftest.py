import numpy as np
import pytest

from semnav.map_model import GridMap
from semnav.trav_graph import build_graph


def corridor_grid(length=5):
    return GridMap(np.ones((1, length)))


def two_corridor_grid(length=6):
    """Two parallel, equal-cost rows separated by a wall, joined at both ends."""
    tau = np.ones((3, length + 2))
    tau[1, 1:-1] = 0.0
    return GridMap(tau)


def random_small_graph(seed, max_vertices=12):
    """A connected-ish random graph with at most ``max_vertices`` vertices."""
    rng = np.random.default_rng(seed)
    while True:
        h, w = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        tau = rng.uniform(0.2, 1.0, (h, w))
        tau[rng.random((h, w)) < 0.25] = 0.0
        grid = GridMap(tau)
        free = int((~grid.nontraversable_mask).sum())
        if 2 <= free <= max_vertices:
            return build_graph(grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
