import numpy as np
import pytest

from logkg import ModelParams, RadialGrid, ShootingConfig, find_ground_state


@pytest.fixture(scope="session")
def grid():
    return RadialGrid(20.0, 4000)


@pytest.fixture(scope="session")
def params3():
    return ModelParams(3.0, 0.0)


@pytest.fixture(scope="session")
def gs3(params3):
    """Shooting ground state at p = 3, omega = 0 on R = 20, n = 4000."""
    return find_ground_state(params3, ShootingConfig(R=20.0, n=4000))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary: one PASS/FAIL line per criterion -----------------------

_ACCEPTANCE: dict[int, str] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    k = int(name.split("_")[2])
    failed = report.failed
    if report.when == "call" or failed:
        prev = _ACCEPTANCE.get(k)
        _ACCEPTANCE[k] = "FAIL" if failed or prev == "FAIL" else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {k}: {_ACCEPTANCE[k]}")
