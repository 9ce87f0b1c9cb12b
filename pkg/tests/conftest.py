import numpy as np
import pytest

from cyclotraffic.core import RoadNetwork, TimeGrid, TrafficMatrix


def ring(n, chords=()):
    """Bidirectional ring on ``n`` vertices plus optional directed chords."""
    tails, heads = [], []
    for v in range(n):
        tails += [v, (v + 1) % n]
        heads += [(v + 1) % n, v]
    for u, v in chords:
        tails.append(u)
        heads.append(v)
    return RoadNetwork(n, np.array(tails), np.array(heads))


@pytest.fixture
def small_ring():
    return ring(6, chords=[(0, 3), (4, 1)])


def const_matrix(m, n, value=60.0, res=600, start=0):
    return TrafficMatrix(TimeGrid(start, n, res), np.full((m, n), value))


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def record(criterion: str, passed: bool, detail: str):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
