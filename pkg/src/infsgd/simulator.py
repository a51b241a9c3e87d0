"""Synthetic observation windows from a uniformized CTMC.

Each window starts in a state drawn from the exact steady state, then
follows the uniformized chain at the events of a rate-``gamma`` Poisson
process until the window length is exceeded; the visit counts of the
initial state and every post-event state are recorded. Because the event
stream is Poisson, the visited states are samples of the time-average
distribution (PASTA; Wolff 1982), so the counts are multinomial draws from
the steady state with a Poisson total of mean ``gamma * T + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ctmc import DEFAULT_SLACK, steady_state, uniformize
from .exceptions import CTMCError
from .likelihood import ObservationWindow, check_observed, tag_window
from .models import ParametricModel


@dataclass(frozen=True)
class SimulationConfig:
    model: ParametricModel
    theta_star: tuple
    n_windows: int = 50
    lambda_min: float = 11.0
    lambda_max: float = 15.0
    window_length: float = 1.0
    observed: tuple = (0, 1)
    seed: int = 0
    slack: float = DEFAULT_SLACK
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.lambda_min > self.lambda_max:
            raise ValueError("lambda_min must not exceed lambda_max")
        if self.lambda_min <= 0:
            raise ValueError("request rates must be positive")
        if self.window_length <= 0:
            raise ValueError("window_length must be positive")
        if self.n_windows < 1:
            raise ValueError("n_windows must be >= 1")
        object.__setattr__(self, "theta_star", tuple(float(v) for v in self.theta_star))
        object.__setattr__(self, "observed", tuple(int(v) for v in self.observed))


def simulate_window(Q, T, rng, slack=DEFAULT_SLACK):
    """Visit counts over all states for one window of length ``T``."""
    chain = uniformize(Q, slack)
    pi = steady_state(chain).pi
    n = pi.size
    counts = np.zeros(n, dtype=np.int64)
    cdf = np.cumsum(chain.P, axis=1)
    cdf[:, -1] = 1.0
    state = int(rng.choice(n, p=pi))
    counts[state] += 1
    t = rng.exponential(1.0 / chain.gamma)
    while t < T:
        state = int(np.searchsorted(cdf[state], rng.random(), side="right"))
        counts[state] += 1
        t += rng.exponential(1.0 / chain.gamma)
    return counts


def generate_dataset(cfg: SimulationConfig):
    """``cfg.n_windows`` windows with counts restricted to ``cfg.observed``."""
    obs = check_observed(cfg.observed, cfg.model.n_states)
    rng = np.random.default_rng(cfg.seed)
    data = []
    for m in range(cfg.n_windows):
        x = float(rng.uniform(cfg.lambda_min, cfg.lambda_max))
        try:
            Q = cfg.model.rate_matrix(x, cfg.theta_star)
            counts = simulate_window(Q, cfg.window_length, rng, cfg.slack)
        except CTMCError as exc:
            raise tag_window(exc, m)
        data.append(ObservationWindow(x, {int(s): int(counts[s]) for s in obs}))
    return data


def draw_loads(lambda_min, lambda_max, n, seed):
    """Request rates only; used for test sets whose truth comes from the exact solver."""
    rng = np.random.default_rng(seed)
    return rng.uniform(lambda_min, lambda_max, size=n)
