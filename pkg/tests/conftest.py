import numpy as np
import pytest

from nihigs.experiments import mems_discrete


@pytest.fixture(scope="session")
def mems_ds():
    return mems_discrete()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(VERDICTS.items()):
            terminalreporter.write_line(line)
