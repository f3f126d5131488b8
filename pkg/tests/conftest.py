import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from flatflow.geometry import BinarySet, GridDomain

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def disk(dom: GridDomain, r: float, center=None) -> BinarySet:
    c = dom.center() if center is None else center
    x = dom.cell_centers()
    rad2 = sum((xi - ci) ** 2 for xi, ci in zip(x, c))
    return BinarySet(dom, rad2 < r * r)


def block(dom: GridDomain, lo, hi) -> BinarySet:
    mask = np.zeros(dom.dims, dtype=bool)
    mask[tuple(slice(a, b) for a, b in zip(lo, hi))] = True
    return BinarySet(dom, mask)


def halfplane(dom: GridDomain, rows: int) -> BinarySet:
    mask = np.zeros(dom.dims, dtype=bool)
    mask[:rows] = True
    return BinarySet(dom, mask)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
