import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bench_solid():
    from gridfault.benchmark import benchmark_setup

    return benchmark_setup("solid", 1)


@pytest.fixture(scope="session")
def bench_solid_topo2():
    from gridfault.benchmark import benchmark_setup

    return benchmark_setup("solid", 2)


def pytest_terminal_summary(terminalreporter):
    from support import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
