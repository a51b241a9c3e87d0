"""Failure-probability prediction and extrapolation error metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
import logging

import numpy as np

from ..ctmc import DEFAULT_SLACK, steady_state, uniformize
from ..exceptions import ZeroTruth
from ..models import apply_relaxation

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    mape: float
    mse: float
    per_window: list = field(default_factory=list)
    ci95: dict = field(default_factory=dict)
    excluded: int = 0

    def to_dict(self):
        return {
            "mape": self.mape,
            "mse": self.mse,
            "ci95": dict(self.ci95),
            "excluded": self.excluded,
            "per_window": [
                {"x": x, "predicted": p, "truth": t} for x, p, t in self.per_window
            ],
        }


def predict_failure_prob(model, theta, x, failure_states=None, relax=None,
                         slack=DEFAULT_SLACK):
    """Steady-state mass on ``failure_states`` under load ``x``."""
    if not x > 0:
        raise ValueError("request rate must be positive")
    failure_states = model.failure_states if failure_states is None else failure_states
    Q = model.rate_matrix(x, theta)
    if relax is not None:
        Q = apply_relaxation(Q, relax)
    pi = steady_state(uniformize(Q, slack)).pi
    return float(pi[list(failure_states)].sum())


def ground_truth(model, theta_star, loads, failure_states=None, slack=DEFAULT_SLACK):
    """``[(x, true failure probability)]`` from the exact solver at ``theta_star``."""
    return [(float(x), predict_failure_prob(model, theta_star, x, failure_states, slack=slack))
            for x in loads]


def _errors(predicted, truth):
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    mse = float(np.mean((predicted - truth) ** 2))
    keep = truth > 0
    if not keep.any():
        raise ZeroTruth("every test window has zero true failure probability")
    mape = float(np.mean(np.abs(predicted[keep] - truth[keep]) / truth[keep]))
    return mape, mse, int((~keep).sum())


def failure_metrics(model, theta, test, failure_states=None, relax=None, slack=DEFAULT_SLACK):
    """(MAPE, MSE) of predicted failure probabilities against ``test`` truth pairs."""
    pred = [predict_failure_prob(model, theta, x, failure_states, relax, slack) for x, _ in test]
    mape, mse, _ = _errors(pred, [t for _, t in test])
    return mape, mse


def evaluate(theta_hat, model, test_truth, failure_states=None, relax=None,
             slack=DEFAULT_SLACK):
    """Compare predictions at ``theta_hat`` with ``[(x, true pi_fail)]``.

    MAPE is the plain ratio ``mean |pred - truth| / truth`` (i.e. already
    divided by 100); windows with zero truth are left out of the MAPE with a
    logged notice but kept in the MSE.
    """
    pred = [predict_failure_prob(model, theta_hat, x, failure_states, relax, slack)
            for x, _ in test_truth]
    truth = [t for _, t in test_truth]
    mape, mse, excluded = _errors(pred, truth)
    if excluded:
        log.info("excluded %d window(s) with zero truth from MAPE", excluded)
    per_window = [(float(x), float(p), float(t)) for (x, t), p in zip(test_truth, pred)]
    return EvalReport(mape=mape, mse=mse, per_window=per_window, excluded=excluded)


def ci95(values):
    """Normal-approximation 95% half-width of the mean."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(1.96 * values.std(ddof=1) / np.sqrt(values.size))
