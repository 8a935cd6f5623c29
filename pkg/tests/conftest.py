import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from batcholp.market import Stream

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def unit_stream(rewards, consumption):
    r = np.asarray(rewards, dtype=float)
    a = np.asarray(consumption, dtype=float)
    n = r.shape[0]
    return Stream(r, a, np.arange(1, n + 1, dtype=float), np.full(n, np.inf), horizon=float(n))


def timed_stream(times, rewards, consumption, horizon, patience=None):
    t = np.asarray(times, dtype=float)
    pat = np.full(t.shape[0], np.inf) if patience is None else np.asarray(patience, dtype=float)
    return Stream(np.asarray(rewards, dtype=float), np.asarray(consumption, dtype=float), t, pat,
                  horizon=float(horizon), kind="poisson")


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in mod.RESULTS:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
