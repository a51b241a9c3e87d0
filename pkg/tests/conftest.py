import functools

import numpy as np
import pytest

from infsgd.harness import experiment as ex
from infsgd.harness.config import bundled_config, load_config
from infsgd.models import ParametricModel

# Acceptance results collected by test_acceptance.py and echoed at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


A1_P = np.array([
    [0.7, 0.3, 0.0, 0.0],
    [0.4, 0.4, 0.2, 0.0],
    [0.0, 0.3, 0.6, 0.1],
    [0.0, 0.0, 0.2, 0.8],
])
A1_P_PRIME = np.array([
    [0.7, 0.3, 0.0, 0.0],
    [0.4, 0.5, 0.1, 0.0],
    [0.0, 0.3, 0.5, 0.2],
    [0.0, 0.0, 0.1, 0.9],
])


def band_generator(up, down, n=20):
    """Birth-death generator with constant up/down rates (the 20x20 slow/fast pair)."""
    Q = np.zeros((n, n))
    i = np.arange(n - 1)
    Q[i, i + 1] = up
    Q[i + 1, i] = down
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


A2_SLOW_Q = band_generator(25.0, 24.0)
A2_FAST_Q = band_generator(25.0, 1.0)

# (model, x, theta) fixtures used by the gradient oracle chain
ORACLE_CASES = [
    (ParametricModel("MM1K", 5), 1.0, np.array([2.0])),
    (ParametricModel("MMmK", 8, m=3), 4.0, np.array([2.0])),
    (ParametricModel("MMMultipleK", 8, d=3), 3.0, np.array([1.5, 1.0, 0.5])),
    (ParametricModel("UpperTriangular", 4), 2.0, np.linspace(0.5, 3.0, 15)),
]
ORACLE_IDS = ["MM1K", "MMmK", "MMMultipleK", "UpperTriangular"]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_stochastic(rng, n, density=1.0):
    P = rng.random((n, n)) * (rng.random((n, n)) < density) + np.eye(n) * 0.1
    return P / P.sum(axis=1, keepdims=True)


@functools.lru_cache(maxsize=None)
def bundled_data(name, replicate=0):
    """(config, dataset, test truth, seeds) for one replicate of a bundled config."""
    cfg = load_config(bundled_config(name))
    seeds = ex.replicate_seeds(cfg, replicate)
    ds, truth = ex.simulate(cfg, seeds)
    return cfg, ds, truth, seeds
