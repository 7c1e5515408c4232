import numpy as np
import pytest

from cryolocal.geometry import GridSpec, TiltGeometry
from cryolocal.phantom import sphere


@pytest.fixture(scope="session")
def grid64():
    return GridSpec.cube(64)


@pytest.fixture(scope="session")
def wedge_geometry():
    return TiltGeometry.uniform(-60, 60, 41)


@pytest.fixture(scope="session")
def full_geometry():
    return TiltGeometry(tuple(np.arange(-90.0, 90.0, 1.0)))


@pytest.fixture(scope="session")
def sphere64(grid64):
    return sphere(grid64, 10.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: list[str] = []


@pytest.fixture
def record_criterion():
    """Record one acceptance criterion as a PASS/FAIL line, then assert it."""

    def record(cid: str, ok: bool, detail: str):
        line = f"{cid} {'PASS' if ok else 'FAIL'}: {detail}"
        _CRITERIA.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
