import dataclasses

import numpy as np
import pytest

from sphkam.config import load_golden
from sphkam.pipeline import assemble_system, reduce_system

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def record():
    """record(number, passed, detail) adds a one-line verdict to the terminal summary."""
    def _record(number: int, passed: bool, detail: str):
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed
    return _record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def golden():
    return load_golden()


def _golden_run(cfg, epsilon):
    kam = dataclasses.replace(cfg.kam, epsilon=epsilon)
    system = assemble_system(cfg.V, cfg.W, kam)
    result = reduce_system(cfg.omegas[0], system.perturbation, kam)
    return kam, system, result


@pytest.fixture(scope="session")
def golden_run(golden):
    """(KamConfig, AssembledSystem, ReductionResult) at the shipped epsilon."""
    return _golden_run(golden, golden.kam.epsilon)


@pytest.fixture(scope="session")
def golden_run_half(golden):
    return _golden_run(golden, golden.kam.epsilon / 2)
