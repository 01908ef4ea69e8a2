import numpy as np
import pytest

from mrconformal.simulation import ExperimentConfig, run_experiment, summarize

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def default_grid():
    """Full S1-S4 x A-C grid, 50 replicates, default configuration."""
    cfg = ExperimentConfig()
    results = run_experiment(cfg)
    return {(s.method, s.setting, s.scenario): s for s in summarize(results)}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def acceptance_report():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
