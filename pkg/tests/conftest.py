import numpy as np
import pytest

from collar_alloc.figures import PANELS, shipped_config
from collar_alloc.strategy import Economy

_ACCEPTANCE = []


def record_criterion(number, passed, detail):
    line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    _ACCEPTANCE.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE, key=lambda x: x[0]):
        terminalreporter.write_line(line)


class EconomyCache:
    """Calibrated economies shared across the test session."""

    def __init__(self):
        self._store = {}

    def get(self, name, gamma=None, myopic=False, times=(0.25,)):
        key = (name, gamma, myopic, tuple(times))
        if key not in self._store:
            cfg = shipped_config(name)
            if gamma is not None:
                cfg = cfg.with_gamma(gamma)
            if myopic:
                cfg = cfg.myopic()
            self._store[key] = Economy(cfg, times=times)
        return self._store[key]


@pytest.fixture(scope="session")
def economies():
    return EconomyCache()


@pytest.fixture(scope="session")
def fig2_configs():
    return {name: shipped_config(name) for name in PANELS}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
