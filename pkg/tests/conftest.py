import numpy as np
import pytest

from fdia_cgcn.case_io import builtin_case
from fdia_cgcn.grid import PQ, SLACK, Branch, Bus, Gen, Grid, graph_from_edges


def two_bus_grid(x=0.1, r=0.0, p_load=0.5, q_load=0.0, in_service=True):
    buses = [Bus(0, SLACK), Bus(1, PQ, p_load=p_load, q_load=q_load)]
    return Grid(100.0, buses, [Branch(0, 1, r, x, in_service=in_service)], [Gen(0, v_set=1.0)])


def random_graph(rng, n, extra_p=0.3, wlo=0.5, whi=5.0):
    """Connected graph from a random tree plus Bernoulli extra edges."""
    rows, cols = [], []
    for v in range(1, n):
        rows.append(v)
        cols.append(int(rng.integers(0, v)))
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < extra_p:
                rows.append(a)
                cols.append(b)
    w = rng.uniform(wlo, whi, len(rows))
    return graph_from_edges(n, rows, cols, w)


@pytest.fixture(scope="session")
def case14():
    return builtin_case("case14")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {detail}")
