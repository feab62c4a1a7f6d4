import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from micromacro.graphs import Graph

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_graph(n, p, rng):
    a = np.triu((rng.random((n, n)) < p).astype(float), 1)
    return Graph(a + a.T)


def random_soft(n, rng, lo=0.05, hi=0.95):
    a = np.triu(rng.uniform(lo, hi, size=(n, n)), 1)
    return a + a.T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    # tests import this file as a plain module, which may be a different
    # object from the one pytest loaded as a plugin
    import conftest

    lines = conftest.ACCEPTANCE_LINES
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
