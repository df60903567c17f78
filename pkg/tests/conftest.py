import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from robustcore.game import RobustGame, ValueFunction, three_firm_game  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_core_game(rng, n, uncertain=2, step=0.5, max_levels=3):
    """A robust game whose robust core is nonempty by construction.

    A positive payoff ``y`` is drawn first; every strict coalition gets an
    upper value at most its share of ``y``, so ``y`` lies in the core of
    the upper game. A few coalitions get a grid of lower values.
    """
    y = rng.uniform(0.5, 3.0, size=n)
    full = (1 << n) - 1
    upper = np.zeros(1 << n)
    for m in range(1, full):
        share = sum(y[j] for j in range(n) if m >> j & 1)
        slack = 0.0 if rng.random() < 0.25 else rng.uniform(0.0, 1.0)
        upper[m] = np.floor((share - slack) * 1000) / 1000
    upper[full] = y.sum()
    lower = upper.copy()
    for m in rng.choice(np.arange(1, full), size=min(uncertain, full - 1), replace=False):
        lower[m] -= step * rng.integers(1, max_levels)
    return RobustGame(ValueFunction(n, lower), ValueFunction(n, upper), step)


@pytest.fixture
def three_firm():
    return three_firm_game()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
