import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nuisreg.model import NuisanceState

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_spd(rng, k, jitter=0.2):
    a = rng.standard_normal((k, k + 2))
    return a @ a.T / (k + 2) + jitter * np.eye(k)


class FixedMoments(NuisanceState):
    """Per-group (xi, Delta) given explicitly."""

    family = "fixed"

    def __init__(self, xis, deltas):
        self.xis, self.deltas = xis, deltas

    def group_moments(self, data, i):
        return self.xis[i], self.deltas[i]


ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for res in sorted(ACCEPTANCE_RESULTS, key=lambda r: r.number):
            terminalreporter.write_line(res.line())
