import numpy as np
import pytest

from csikit.core import ChannelConfig


@pytest.fixture
def cfg():
    return ChannelConfig.default()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance report: one line per criterion, printed after the run

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion it checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None or (rep.when != "call" and not rep.failed):
        return
    n, title = m.args
    _, ok = _CRITERIA.get(n, (title, True))
    _CRITERIA[n] = (title, ok and rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}")
