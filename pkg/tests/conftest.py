import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tinbinn.model_io import gen_random_model
from tinbinn.netgraph import builtin_network

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def reduced_spec():
    return builtin_network("reduced")


@pytest.fixture(scope="session")
def reduced_model(reduced_spec):
    return gen_random_model(reduced_spec, 7)


@pytest.fixture(scope="session")
def small_model():
    from tinbinn.netgraph import parse_network

    return gen_random_model(parse_network("(2x8C3)-MP2-20C3-MP2-(2x24FC)-10SVM"), 99)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, what = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {what}")
