"""scikit-learn style wrapper around :func:`infsgd.optimizer.fit`.

``X`` holds one request rate per row and ``y`` the counts observed in each
window, one column per observed state (in the order of
``observed_states``). ``predict`` extrapolates the failure probability to
new loads and ``predict_proba`` returns the full steady state.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import batch
from .ctmc import DEFAULT_SLACK
from .likelihood import ObservationWindow, check_observed
from .models import EPS_FLOOR, ParametricModel
from .optimizer import OptimizerConfig, fit


class CTMCRateEstimator(BaseEstimator):
    """Fit the rates of a parametric CTMC from aggregate observed-state counts.

    Parameters
    ----------
    kind : {"MM1K", "MMmK", "MMMultipleK", "UpperTriangular"}
    K : int
        Queue capacity.
    m, d : int
        Server count (``MMmK``) and number of learnable bands (``MMMultipleK``).
    observed_states : tuple of int
        Columns of ``y``.
    failure_states : tuple of int, optional
        States summed by :meth:`predict`; defaults to the model's last state.
    engine, epochs, eta0, schedule, decay, p, T, eps_floor, alpha, batch_size, slack
        Passed to :class:`~infsgd.optimizer.OptimizerConfig`.
    theta0 : array_like, optional
        Starting rates.
    random_state : int
        Seed for the stopping draws and minibatch order.

    Attributes
    ----------
    theta_ : ndarray
        Fitted rates.
    q_tilde_ : Relaxation or None
    fit_result_ : FitResult
    model_ : ParametricModel
    """

    def __init__(self, kind="MM1K", K=20, m=1, d=3, observed_states=(0, 1),
                 failure_states=None, engine="infsgd", epochs=50, eta0=0.1,
                 schedule="constant", decay=0.0, p=0.1, T=7, eps_floor=EPS_FLOOR,
                 alpha=None, batch_size=None, slack=DEFAULT_SLACK, theta0=None,
                 random_state=0):
        self.kind = kind
        self.K = K
        self.m = m
        self.d = d
        self.observed_states = observed_states
        self.failure_states = failure_states
        self.engine = engine
        self.epochs = epochs
        self.eta0 = eta0
        self.schedule = schedule
        self.decay = decay
        self.p = p
        self.T = T
        self.eps_floor = eps_floor
        self.alpha = alpha
        self.batch_size = batch_size
        self.slack = slack
        self.theta0 = theta0
        self.random_state = random_state

    def _model(self):
        return ParametricModel(kind=self.kind, K=self.K, m=self.m, d=self.d)

    def _optimizer_config(self):
        return OptimizerConfig(
            engine=self.engine, epochs=self.epochs, eta0=self.eta0, schedule=self.schedule,
            decay=self.decay, p=self.p, T=self.T, eps_floor=self.eps_floor, alpha=self.alpha,
            seed=int(self.random_state), slack=self.slack, batch_size=self.batch_size)

    @staticmethod
    def _loads(X):
        X = check_array(X, ensure_2d=False)
        loads = X.ravel() if X.ndim == 1 or X.shape[1] == 1 else None
        if loads is None:
            raise ValueError(f"X must hold one request rate per row, got shape {X.shape}")
        if np.any(loads <= 0):
            raise ValueError("request rates must be positive")
        return loads

    def fit(self, X, y, test=None):
        """Fit to loads ``X`` (n_windows, 1) and counts ``y`` (n_windows, n_observed).

        ``test`` is an optional list of ``(x, true failure probability)``
        pairs tracked in the trajectory.
        """
        X, y = check_X_y(X, y, multi_output=True, ensure_2d=False)
        model = self._model()
        obs = check_observed(self.observed_states, model.n_states)
        loads = self._loads(X)
        y = np.asarray(y)
        if y.ndim == 1:
            y = y[:, None]
        if y.shape[1] != obs.size:
            raise ValueError(f"y has {y.shape[1]} columns, expected one per observed state "
                             f"({obs.size})")
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("counts must be nonnegative integers")
        windows = [ObservationWindow(float(x), {int(s): int(c) for s, c in zip(obs, row)})
                   for x, row in zip(loads, y)]
        result = fit(windows, model, obs, self._optimizer_config(), theta0=self.theta0,
                     test=test, failure_states=self.failure_states)
        self.model_ = model
        self.theta_ = result.theta_hat
        self.q_tilde_ = result.q_tilde_hat
        self.fit_result_ = result
        self.n_features_in_ = 1
        return self

    def predict_proba(self, X):
        """Steady-state distribution at each load, shape (n_samples, n_states)."""
        check_is_fitted(self, "theta_")
        loads = self._loads(X)
        qt = None if self.q_tilde_ is None else self.q_tilde_.q_tilde
        Q = batch.rate_matrices(self.model_, loads, self.theta_, qt)
        P, _ = batch.uniformize(Q, self.slack)
        return batch.steady_states(P)

    def predict(self, X):
        """Failure probability (steady-state mass on ``failure_states``) at each load."""
        check_is_fitted(self, "theta_")
        states = self.model_.failure_states if self.failure_states is None else self.failure_states
        return self.predict_proba(X)[:, list(states)].sum(axis=1)

    def score(self, X, y):
        """Mean per-window conditional log-likelihood of counts ``y`` (higher is better)."""
        pi = self.predict_proba(X)
        obs = check_observed(self.observed_states, self.model_.n_states)
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        Y = np.zeros_like(pi)
        Y[:, obs] = y
        nll, _ = batch.nll_and_grad(Y, pi, obs)
        return float(-nll.mean())
