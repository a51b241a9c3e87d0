import numpy as np
import pytest

from infsgd import simulator
from infsgd.exceptions import CTMCError, SingularSystem
from infsgd.models import ParametricModel
from infsgd.simulator import SimulationConfig, draw_loads, generate_dataset, simulate_window

K2 = ParametricModel("MM1K", 2)
PI_K2 = np.array([4, 2, 1]) / 7


def within_3se(counts, pi):
    n = counts.sum()
    freq = counts / n
    se = np.sqrt(pi * (1 - pi) / n)
    return np.abs(freq - pi) <= 3 * se


def test_single_state_chain():
    rng = np.random.default_rng(0)
    totals = [simulate_window(np.zeros((1, 1)), 5.0, rng, slack=1.0) for _ in range(2000)]
    assert all(t.shape == (1,) and t[0] >= 1 for t in totals)
    # gamma = 1 here, so the count is a Poisson(5) event count plus the initial state
    assert np.mean(totals) == pytest.approx(6.0, abs=3 * np.sqrt(5 / 2000))


def test_long_window_frequencies():
    counts = simulate_window(K2.rate_matrix(1.0, [2.0]), 1000.0, np.random.default_rng(1))
    assert counts.sum() > 2500
    assert np.all(within_3se(counts, PI_K2))


def test_pooled_short_windows():
    rng = np.random.default_rng(2)
    Q = K2.rate_matrix(1.0, [2.0])
    counts = sum(simulate_window(Q, 1.0, rng) for _ in range(200))
    assert np.all(within_3se(counts, PI_K2))


def test_mean_total_count():
    rng = np.random.default_rng(3)
    Q = K2.rate_matrix(1.0, [2.0])
    gamma = 3.0 * 1.01
    totals = np.array([simulate_window(Q, 1.0, rng).sum() for _ in range(4000)])
    assert totals.mean() == pytest.approx(gamma + 1, abs=3 * np.sqrt(gamma / 4000))


class TestGenerateDataset:
    cfg = SimulationConfig(ParametricModel("MM1K", 20), (25.0,), n_windows=50,
                           lambda_min=11, lambda_max=15, seed=0)

    def test_shape_and_masking(self):
        data = generate_dataset(self.cfg)
        assert len(data) == 50
        assert all(set(w.counts) == {0, 1} for w in data)
        assert all(11 <= w.x <= 15 for w in data)

    def test_deterministic(self):
        assert generate_dataset(self.cfg) == generate_dataset(self.cfg)
        other = SimulationConfig(**{**self.cfg.__dict__, "seed": 1})
        assert generate_dataset(other) != generate_dataset(self.cfg)

    def test_error_carries_window_index(self, monkeypatch):
        calls = {"n": 0}
        real = simulator.simulate_window

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 4:
                raise SingularSystem("elimination broke down")
            return real(*args, **kwargs)

        monkeypatch.setattr(simulator, "simulate_window", flaky)
        with pytest.raises(CTMCError) as info:
            generate_dataset(self.cfg)
        assert info.value.window == 3

    @pytest.mark.parametrize("kwargs", [
        {"lambda_min": 5, "lambda_max": 1}, {"lambda_min": 0}, {"window_length": 0},
        {"n_windows": 0},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            SimulationConfig(K2, (2.0,), **kwargs)


def test_draw_loads():
    a = draw_loads(31, 60, 50, 7)
    np.testing.assert_array_equal(a, draw_loads(31, 60, 50, 7))
    assert a.min() >= 31 and a.max() <= 60
