import pytest

from hierflow.chain import solve_chain
from hierflow.model import ModelConfig
from hierflow.rgflow import fixed_point

ACCEPTANCE_LINES = []


def record(criterion: int, ok: bool, detail: str):
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fixed_points():
    """b = 2 fixed points keyed by b*theta."""
    return {bt: fixed_point(2, bt / 2) for bt in (1.002, 1.02, 1.05, 1.1)}


@pytest.fixture(scope="session")
def small_chain():
    cfg = ModelConfig.constant(2, 20.0, 6)
    return cfg, solve_chain(cfg)


@pytest.fixture(scope="session")
def gibbs_config():
    return ModelConfig.constant(2, 10.0, 2)
