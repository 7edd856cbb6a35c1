import os

import numpy as np
import pytest

from jmgst.params import JointModelParams, TrialDesign
from jmgst.simulate import simulate_trial

QUICK = os.environ.get("JMGST_QUICK", "") not in ("", "0")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo run; skipped when JMGST_QUICK=1")


def pytest_collection_modifyitems(config, items):
    if not QUICK:
        return
    skip = pytest.mark.skip(reason="JMGST_QUICK=1 skips long Monte Carlo runs")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def small_design():
    return TrialDesign(n=120, measurement_schedule=tuple(float(t) for t in range(0, 60, 3)))


@pytest.fixture(scope="session")
def default_params():
    return JointModelParams(gamma=0.06, sigma_sq=1.0)


@pytest.fixture(scope="session")
def small_trial(default_params, small_design):
    return simulate_trial(default_params, small_design, 2024)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
