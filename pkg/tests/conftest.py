import time

import pytest

_ACCEPTANCE = []
_SUITE_BUDGET_S = 300.0


def pytest_sessionstart(session):
    session.config._suite_start = time.perf_counter()


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE:
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")
    # the size-scan criterion also bounds the wall time of the whole suite
    elapsed = time.perf_counter() - config._suite_start
    verdict = "PASS" if elapsed <= _SUITE_BUDGET_S else "FAIL"
    terminalreporter.write_line(
        f"{verdict}  criterion_10_suite_runtime ({elapsed:.1f} s, budget {_SUITE_BUDGET_S:.0f} s)"
    )


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)
