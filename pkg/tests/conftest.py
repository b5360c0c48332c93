import numpy as np
import pytest
from hypothesis import settings

from mobscope.data import Day, GpsDataset
from mobscope.simulate import load_world

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def world_patterns():
    return load_world()


@pytest.fixture(scope="session")
def world(world_patterns):
    return world_patterns[0]


@pytest.fixture(scope="session")
def patterns(world_patterns):
    return world_patterns[1]


def even_times(m):
    j = np.arange(1, m + 1)
    return (2 * j - 1) / (2 * m)


def make_dataset(n_days, m, seed=0, even=True, spread=1.0):
    """Random walk days on a small square; handy for estimator identities."""
    rng = np.random.default_rng(seed)
    days = []
    for i in range(n_days):
        t = even_times(m) if even else np.sort(rng.uniform(0.01, 0.99, m))
        if not even:
            t = np.unique(t)
        xy = np.cumsum(rng.normal(0, 0.1 * spread, (t.size, 2)), axis=0) + rng.normal(0, spread, 2)
        days.append(Day(t, xy, {"day_id": i}))
    return GpsDataset(days)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
