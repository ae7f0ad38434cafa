import numpy as np
import pytest

from drlogcon.inference import simulate_pivots
from drlogcon.sim import draw_dgp


@pytest.fixture(scope="session")
def small_pivots():
    """A quick pivot table for unit tests (not for calibration checks)."""
    return simulate_pivots(n_sim=2000, B=400, seed=11)


@pytest.fixture(scope="session")
def dgp_sample():
    return draw_dgp(1500, 123).sample


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[key])
