"""Projected stochastic gradient descent for parametric CTMCs.

Each epoch evaluates one gradient per training window (a fresh geometric
draw for ``infsgd``, a full pass through the squarings for ``dcbptt``),
averages them, takes a step with the scheduled learning rate and projects
``theta`` back onto ``[eps_floor, inf)``. Relaxation entries take the same
step with the ``2 * alpha * Q~`` penalty gradient added and are clamped at 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
import logging

import numpy as np

from .ctmc import DEFAULT_SLACK, spectral_gap, steady_state, uniformize
from .exceptions import CTMCError, EngineFailure, NonFiniteGradient
from .gradients import StoppingRule, dcbptt_from_chain, sample_stopped_gradient
from . import batch
from .likelihood import check_observed, nll_grad_pi
from .models import EPS_FLOOR, Relaxation, apply_relaxation

log = logging.getLogger(__name__)

SCHEDULES = ("constant", "inverse_t")


@dataclass(frozen=True)
class OptimizerConfig:
    engine: str = "infsgd"
    epochs: int = 50
    eta0: float = 0.1
    schedule: str = "constant"
    decay: float = 0.0
    p: float = 0.1
    T: int = 7
    eps_floor: float = EPS_FLOOR
    alpha: float | None = None
    seed: int = 0
    slack: float = DEFAULT_SLACK
    batch_size: int | None = None

    def __post_init__(self):
        if self.engine not in ("infsgd", "dcbptt"):
            raise ValueError(f"engine must be 'infsgd' or 'dcbptt', got {self.engine!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if self.decay < 0:
            raise ValueError("decay must be >= 0")
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not self.eps_floor > 0:
            raise ValueError("eps_floor must be positive")
        if self.alpha is not None and self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_nll: float
    theta: np.ndarray
    test_mape: float | None = None
    test_mse: float | None = None


@dataclass
class FitResult:
    theta_hat: np.ndarray
    q_tilde_hat: Relaxation | None
    trajectory: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def lr_schedule(cfg, h):
    """Learning rate at epoch ``h``."""
    if h < 0:
        raise ValueError("epoch must be >= 0")
    if cfg.schedule == "constant":
        return cfg.eta0
    return cfg.eta0 / (1.0 + h * cfg.decay)


def epoch_draws(cfg, epoch, n_windows):
    """Stopping times for every window of an epoch, fixed by ``(seed, epoch)``.

    Window ``m`` always receives entry ``m``, so the draws do not depend on
    evaluation order or on which windows are skipped.
    """
    rng = np.random.default_rng([cfg.seed, epoch])
    return rng.geometric(cfg.p, size=n_windows)


def epoch_batches(cfg, epoch, n_windows):
    """Index arrays of the minibatches for one epoch.

    Full batch keeps window order; smaller batches use a permutation seeded by
    ``(seed, epoch)`` and independent of the stopping draws.
    """
    if cfg.batch_size is None or cfg.batch_size >= n_windows:
        return [np.arange(n_windows)]
    order = np.random.default_rng([cfg.seed, epoch, 1]).permutation(n_windows)
    return [order[i:i + cfg.batch_size] for i in range(0, n_windows, cfg.batch_size)]


def window_gradient(cfg, model, window, obs, theta, relax=None, J=None, draw=None):
    """Single-window engine gradient; the reference for the batched epoch.

    ``J`` defaults to the model's Jacobian stack (append relaxation
    Jacobians to include ``Q~`` entries). ``draw`` fixes the stopping time
    for ``infsgd``.
    """
    J = model.rate_jacobians() if J is None else J
    Q = model.rate_matrix(window.x, theta)
    if relax is not None:
        Q = apply_relaxation(Q, relax)
    chain = uniformize(Q, cfg.slack)
    if cfg.engine == "dcbptt":
        _, grad = dcbptt_from_chain(chain, J, window, obs, cfg.T)
        return grad
    ss = steady_state(chain)
    lg = nll_grad_pi(window, ss, obs)
    rule = StoppingRule(p=cfg.p, rng_seed=cfg.seed)
    return sample_stopped_gradient(chain, ss, J, lg, rule, draw=draw).values


def epoch_gradients(cfg, model, windows, obs, theta, relax, J, draws=None):
    """Per-window gradients for a whole epoch, shape ``(M, n_params_total)``."""
    xs = np.array([w.x for w in windows])
    Y = batch.count_matrix(windows, model.n_states)
    Q = batch.rate_matrices(model, xs, theta, None if relax is None else relax.q_tilde)
    P, gamma = batch.uniformize(Q, cfg.slack)
    if cfg.engine == "dcbptt":
        _, adj = batch.dcbptt(P, Y, obs, cfg.T)
        return batch.adjoint_contract(Q, gamma, cfg.slack, J, adj)
    pi = batch.steady_states(P)
    _, lg = batch.nll_and_grad(Y, pi, obs)
    u = batch.stopped_series(P, lg, np.asarray(draws), cfg.p)
    return batch.dp_contract(Q, gamma, cfg.slack, J, pi, u)


def train_nll(model, windows, obs, theta, relax, slack):
    xs = np.array([w.x for w in windows])
    Q = batch.rate_matrices(model, xs, theta, None if relax is None else relax.q_tilde)
    P, _ = batch.uniformize(Q, slack)
    nll, _ = batch.nll_and_grad(batch.count_matrix(windows, model.n_states),
                                batch.steady_states(P), obs)
    total = float(nll.sum())
    return total + (relax.penalty if relax is not None else 0.0)


def batch_failure_metrics(model, theta, test, failure_states, relax, slack):
    xs = np.array([x for x, _ in test])
    truth = np.array([t for _, t in test])
    Q = batch.rate_matrices(model, xs, theta, None if relax is None else relax.q_tilde)
    P, _ = batch.uniformize(Q, slack)
    pred = batch.steady_states(P)[:, list(failure_states)].sum(axis=1)
    keep = truth > 0
    mape = float(np.mean(np.abs(pred[keep] - truth[keep]) / truth[keep]))
    return mape, float(np.mean((pred - truth) ** 2))


def fit(data, model, obs, cfg: OptimizerConfig, theta0=None, test=None,
        failure_states=None, callback=None):
    """Fit ``theta`` (and optionally ``Q~``) to observation windows.

    Parameters
    ----------
    data : list of ObservationWindow
    model : ParametricModel
    obs : iterable of int
        Observed state set ``S'``.
    cfg : OptimizerConfig
    theta0 : array_like, optional
        Starting point; defaults to ``model.initial_theta(cfg.eps_floor)``.
    test : list of (x, true_failure_prob), optional
        If given, test MAPE/MSE are recorded at every epoch.
    failure_states : iterable of int, optional
        States whose mass is the predicted failure probability.
    callback : callable, optional
        Called with each :class:`EpochRecord` as it is produced.

    Returns
    -------
    FitResult
    """
    if not data:
        raise ValueError("no training windows")
    obs = check_observed(obs, model.n_states)
    theta = (model.initial_theta(cfg.eps_floor) if theta0 is None
             else np.maximum(np.asarray(theta0, dtype=float).ravel(), cfg.eps_floor))
    if theta.size != model.n_params:
        raise ValueError(f"theta0 has {theta.size} entries, model needs {model.n_params}")
    relax = None if cfg.alpha is None else Relaxation.zeros(model, cfg.alpha)
    J = model.rate_jacobians()
    if relax is not None:
        J = np.concatenate([J, relax.jacobians(model)])
    failure_states = model.failure_states if failure_states is None else tuple(failure_states)

    active = [m for m, w in enumerate(data) if sum(w.counts.get(int(s), 0) for s in obs) > 0]
    skipped = len(data) - len(active)
    warnings = []
    if skipped:
        msg = f"skipping {skipped} window(s) with no observed-state counts"
        log.info(msg)
        warnings.append(msg)
    if not active:
        raise ValueError("every training window has zero observed-state counts")
    train = [data[m] for m in active]

    def record(epoch):
        try:
            nll = train_nll(model, train, obs, theta, relax, cfg.slack)
        except CTMCError:
            nll = float("nan")
        rec = EpochRecord(epoch=epoch, train_nll=nll, theta=theta.copy())
        if test is not None:
            rec.test_mape, rec.test_mse = batch_failure_metrics(
                model, theta, test, failure_states, relax, cfg.slack)
        if callback is not None:
            callback(rec)
        return rec

    trajectory = [record(0)]
    for h in range(cfg.epochs):
        eta = lr_schedule(cfg, h)
        draws = epoch_draws(cfg, h, len(data))[active] if cfg.engine == "infsgd" else None
        for idx in epoch_batches(cfg, h, len(train)):
            theta, relax = _step(cfg, model, [train[i] for i in idx], obs, theta, relax, J,
                                 None if draws is None else draws[idx], eta, h,
                                 [active[i] for i in idx])
        trajectory.append(record(h + 1))

    gaps = []
    for w in train:
        Q = model.rate_matrix(w.x, theta)
        if relax is not None:
            Q = apply_relaxation(Q, relax)
        try:
            gaps.append(spectral_gap(uniformize(Q, cfg.slack)))
        except CTMCError:
            gaps.append(0.0)
    diagnostics = {
        "spectral_gap_min": float(min(gaps)),
        "spectral_gap_max": float(max(gaps)),
        "skipped_windows": skipped,
        "warnings": warnings,
    }
    if cfg.engine == "infsgd" and cfg.p >= min(gaps):
        log.debug("p=%s is not below the smallest spectral gap %.4g", cfg.p, min(gaps))
    return FitResult(theta_hat=theta, q_tilde_hat=relax, trajectory=trajectory,
                     diagnostics=diagnostics)


def _step(cfg, model, windows, obs, theta, relax, J, draws, eta, epoch, ids):
    """One projected update from the mean gradient over ``windows``."""
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            G = epoch_gradients(cfg, model, windows, obs, theta, relax, J, draws)
    except FloatingPointError as exc:
        raise NonFiniteGradient(f"{cfg.engine} gradient overflow: {exc}", epoch=epoch) from exc
    except CTMCError as exc:
        raise EngineFailure(f"{cfg.engine} failed: {exc}", epoch=epoch,
                            window=_window_of(exc, ids)) from exc
    bad = ~np.all(np.isfinite(G), axis=1)
    if bad.any():
        raise NonFiniteGradient("non-finite gradient", epoch=epoch,
                                window=ids[int(np.nonzero(bad)[0][0])])
    mean = G.mean(axis=0)
    k = model.n_params
    theta = np.maximum(theta - eta * mean[:k], cfg.eps_floor)
    if relax is not None:
        free = relax.free_values(model)
        step = mean[k:] + 2.0 * relax.alpha * free
        relax = relax.with_free_values(model, free - eta * step)
    return theta, relax


def _window_of(exc, active):
    msg = str(exc)
    if msg.startswith("window "):
        try:
            return active[int(msg.split()[1].rstrip(":"))]
        except (ValueError, IndexError):
            return None
    return None
