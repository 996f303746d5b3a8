import numpy as np
import pytest
from hypothesis import settings

from pathhj.path_core import GridSpec

settings.register_profile("pathhj", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("pathhj")


@pytest.fixture
def grid1():
    return GridSpec(h=1.0, T=1.0, dt=1 / 64, n=1)


@pytest.fixture
def grid2():
    return GridSpec(h=0.5, T=1.0, dt=1 / 32, n=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture
def acceptance_log():
    def log(line):
        print(line)
        _ACCEPTANCE.append(line)
    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
