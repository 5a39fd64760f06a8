import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from edmdmpc.plant import PlantParams, steady_state

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def params():
    return PlantParams()


@pytest.fixture(scope="session")
def state0(params):
    return steady_state(params)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = {}


@pytest.fixture
def record():
    """Log one PASS/FAIL line for an acceptance criterion and return ``ok``."""
    def _record(key, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}"
        _ACCEPTANCE[key] = line
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    order = lambda k: tuple(int(p) if p.isdigit() else p for p in k.replace("-", " ").split())
    for key in sorted(_ACCEPTANCE, key=order):
        terminalreporter.write_line(_ACCEPTANCE[key])
