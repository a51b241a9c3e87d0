"""Conditional negative log-likelihood of observed-state counts.

The steady state is renormalised over the observed set ``S'`` before the
multinomial log-likelihood is taken, so mass on unobserved states only
enters through the normalising constant.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ctmc import DEFAULT_SLACK, SteadyState, steady_state, uniformize
from .exceptions import CTMCError, IndexOutOfRange, ZeroMass, ZeroProbabilityObserved
from .models import apply_relaxation

PI_FLOOR = 1e-300


@dataclass(frozen=True)
class ObservationWindow:
    """Counts of steady-state observations in one time window at load ``x``."""

    x: float
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {int(k): int(v) for k, v in self.counts.items()}
        if any(v < 0 for v in clean.values()):
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", clean)

    @property
    def total(self):
        return sum(self.counts.values())

    def count_vector(self, n_states):
        y = np.zeros(n_states)
        for state, c in self.counts.items():
            if not 0 <= state < n_states:
                raise IndexOutOfRange(f"count for state {state} outside 0..{n_states - 1}")
            y[state] = c
        return y

    def masked(self, obs):
        keep = set(obs)
        return ObservationWindow(self.x, {s: c for s, c in self.counts.items() if s in keep})


def check_observed(obs, n_states):
    """Validate an observed-state set and return it as a sorted int array."""
    idx = np.unique(np.asarray(list(obs), dtype=int))
    if idx.size == 0:
        raise ValueError("observed state set must be non-empty")
    if idx[0] < 0 or idx[-1] >= n_states:
        raise IndexOutOfRange(f"observed states must lie in 0..{n_states - 1}")
    return idx


def _prepare(window, pi, obs):
    pi = np.asarray(pi.pi if isinstance(pi, SteadyState) else pi, dtype=float)
    obs = check_observed(obs, pi.size)
    y = window.count_vector(pi.size) if isinstance(window, ObservationWindow) else np.asarray(window, float)
    if y.size != pi.size:
        raise IndexOutOfRange("count vector length does not match the state space")
    outside = np.setdiff1d(np.nonzero(y)[0], obs)
    if outside.size:
        raise IndexOutOfRange(f"counts recorded for unobserved states {outside.tolist()}")
    mass = pi[obs].sum()
    if not mass > PI_FLOOR:
        raise ZeroMass("observed states carry no steady-state probability")
    bad = obs[(y[obs] > 0) & (pi[obs] < PI_FLOOR)]
    if bad.size:
        raise ZeroProbabilityObserved(f"states {bad.tolist()} observed with zero probability")
    return pi, y, obs, mass


def window_nll(window, pi, obs):
    """``-sum_{j in S'} y_j log(pi_j / sum_{j' in S'} pi_j')``; zero counts contribute 0."""
    pi, y, obs, mass = _prepare(window, pi, obs)
    yo = y[obs]
    used = yo > 0
    p = np.maximum(pi[obs][used], PI_FLOOR)
    return float(-np.sum(yo[used] * (np.log(p) - np.log(mass))))


def nll_grad_pi(window, pi, obs):
    """Gradient of :func:`window_nll` with respect to every entry of ``pi``."""
    pi, y, obs, mass = _prepare(window, pi, obs)
    g = np.zeros_like(pi)
    yo = y[obs]
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(yo > 0, -yo / np.maximum(pi[obs], PI_FLOOR), 0.0)
    g[obs] = term + yo.sum() / mass
    return g


def tag_window(exc, index):
    """Attach the offending window index to an error before re-raising it."""
    exc.window = index
    exc.args = (f"window {index}: {exc}",)
    return exc


def window_steady_state(model, x, theta, relax=None, slack=DEFAULT_SLACK):
    Q = model.rate_matrix(x, theta)
    if relax is not None:
        Q = apply_relaxation(Q, relax)
    chain = uniformize(Q, slack)
    return chain, steady_state(chain)


def dataset_nll(data, model, theta, obs, relax=None, slack=DEFAULT_SLACK):
    """Summed window NLL over ``data`` plus the relaxation penalty, if any."""
    total = 0.0
    for m, window in enumerate(data):
        try:
            _, ss = window_steady_state(model, window.x, theta, relax, slack)
            total += window_nll(window, ss, obs)
        except CTMCError as exc:
            raise tag_window(exc, m)
    if relax is not None:
        total += relax.penalty
    return total
