import logging

import pytest

from robust_dsm.game import SolverConfig, naive_config, solve
from robust_dsm.scenario import ScenarioSpec, build_scenario


@pytest.fixture(autouse=True)
def _quiet_solver_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="robust_dsm")


@pytest.fixture(scope="session")
def desk():
    return build_scenario(ScenarioSpec(user_count=20, rng_seed=0))


@pytest.fixture(scope="session")
def desk_robust(desk):
    return solve(desk, SolverConfig())


@pytest.fixture(scope="session")
def desk_naive(desk):
    return solve(desk, naive_config(SolverConfig()))


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record and assert one acceptance criterion."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 10):
        terminalreporter.write_line(_CRITERIA.get(n, f"criterion {n}: FAIL  (not evaluated)"))
