import logging

import pytest

from kzq.langevin_sim import SimConfig
from kzq.quench import QuenchProtocol

# (criterion, passed, detail) collected by the acceptance tests
ACCEPTANCE = []


def _record(criterion, passed, detail):
    ACCEPTANCE.append((criterion, bool(passed), detail))


@pytest.fixture
def record():
    """Callable ``record(criterion, passed, detail)`` for the acceptance summary."""
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0][2:])):
        terminalreporter.write_line(f"{crit} {'PASS' if ok else 'FAIL'}: {detail}")


@pytest.fixture(autouse=True)
def _quiet_sim_logs():
    logging.getLogger("kzq.langevin_sim").setLevel(logging.ERROR)
    yield


@pytest.fixture
def small_ring():
    return SimConfig(QuenchProtocol("linear", 20.0), t_start=-2.0, t_end=20.0, n_ions=8,
                     eta=0.1, kT=1e-6, equilibration_time=5.0, relax_time=5.0)
