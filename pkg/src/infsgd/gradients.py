"""Gradient engines for the steady-state loss.

Three routes to ``dL/dtheta``:

* truncated chain rule through ``P^t`` (and its divide-and-conquer variant
  through ``T`` squarings, :func:`dcbptt_loss_grad`);
* the exact infinite series, summed in closed form with the fundamental
  matrix (:func:`exact_steady_gradient`), used as the oracle;
* the randomly stopped estimator (:func:`sample_stopped_gradient`), which
  truncates the series at a geometric time and reweights each term by its
  survival probability so that the truncation is unbiased.

All of them are built from ``dP/dq_ij``, the derivative of the uniformized
matrix with respect to one rate, where the uniformization rate ``gamma`` may
itself move with ``q_ij``.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np

from .ctmc import UniformizedChain, SteadyState, spectral_gap, uniformize
from .exceptions import DiagonalRequest, StructuralZero
from .likelihood import nll_grad_pi, window_nll
from .models import apply_relaxation

log = logging.getLogger(__name__)

ENGINES = ("truncated", "dcbptt", "infsgd", "exact")


@dataclass(frozen=True)
class DpDq:
    i: int
    j: int
    matrix: np.ndarray
    dense: bool


@dataclass(frozen=True)
class StoppingRule:
    """Geometric stopping time on ``{1, 2, ...}`` with success probability ``p``."""

    p: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")

    def survival(self, t):
        """``Pr[X > t] = (1 - p)^t``."""
        return (1.0 - self.p) ** np.asarray(t)

    def check_gap(self, chain):
        """Log (never enforce) the sufficient condition ``p < spectral gap``."""
        delta = spectral_gap(chain)
        if self.p >= delta:
            log.debug("stopping probability p=%.3g exceeds spectral gap %.3g", self.p, delta)
        return delta


@dataclass(frozen=True)
class GradientEstimate:
    values: np.ndarray
    engine: str
    draw: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}")
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError(f"{self.engine} gradient has non-finite entries")


def _gamma_slope(chain):
    """``d gamma / d(-Q_rr)`` for the attaining row ``r``; 0 if gamma is fixed."""
    if chain.slack is None or chain.Q is None:
        return 0.0
    if np.max(-np.diag(chain.Q)) <= 0:
        return 0.0
    return 1.0 + chain.slack


def dp_dq(chain: UniformizedChain, Q, i, j, allow_zero=False):
    """``dP/dq_ij`` for an off-diagonal rate, with ``q_ii`` compensating.

    When row ``i`` is not the row setting ``gamma`` the result has only two
    nonzero entries, ``-1/gamma`` at ``(i, i)`` and ``1/gamma`` at ``(i, j)``.
    Otherwise ``gamma`` moves too and every entry picks up a ``-q_kh/gamma^2``
    term scaled by ``d gamma / d q_ij``.
    """
    Q = np.asarray(Q, dtype=float)
    if i == j:
        raise DiagonalRequest("dP/dq_ii is not a free derivative; use an off-diagonal rate")
    if Q[i, j] == 0 and not allow_zero:
        raise StructuralZero(f"q_{i}{j} is structurally zero")
    n = Q.shape[0]
    g = chain.gamma
    D = np.zeros((n, n))
    D[i, i] = -1.0 / g
    D[i, j] = 1.0 / g
    slope = _gamma_slope(chain)
    dense = slope != 0.0 and i == chain.gamma_row
    if dense:
        D -= Q * slope / g**2
    return DpDq(i=i, j=j, matrix=D, dense=dense)


def dp_dtheta(chain: UniformizedChain, dQ):
    """``dP/dtheta_k = sum_ij dP/dq_ij * dq_ij/dtheta_k`` for a stack of ``dQ``.

    ``dQ`` is one ``(n, n)`` derivative matrix or a stack ``(k, n, n)``, each
    with the diagonal compensation already applied.
    """
    dQ = np.asarray(dQ, dtype=float)
    single = dQ.ndim == 2
    dQ = dQ[None] if single else dQ
    g = chain.gamma
    out = dQ / g
    slope = _gamma_slope(chain)
    if slope:
        r = chain.gamma_row
        dgamma = slope * (-dQ[:, r, r])
        out = out - dgamma[:, None, None] * chain.Q[None] / g**2
    return out[0] if single else out


def truncated_power_gradient(chain, dQ, t):
    """``d(P^t)/dtheta_k = sum_{l=1}^t P^(t-l) dP P^(l-1)``."""
    if t < 1:
        raise ValueError("t must be >= 1")
    P = chain.P
    dP = dp_dtheta(chain, dQ)
    D = dP.copy()
    Pl = P.copy()  # P^(s) after s loop passes
    for _ in range(1, t):
        # d(P^(s+1)) = P d(P^s) + dP P^s
        D = P @ D + dP @ Pl
        Pl = Pl @ P
    return D


def exact_steady_gradient(chain, ss, Z, dQ):
    """Row vector(s) ``pi^T dP_k Z``, the derivative of the steady state.

    Every row of the limiting matrix ``Pi sum_l dP_k P^l`` equals this vector.
    """
    pi = ss.pi if isinstance(ss, SteadyState) else np.asarray(ss, dtype=float)
    dP = dp_dtheta(chain, dQ)
    return (pi @ dP) @ Z


def exact_loss_grad(chain, ss, Z, dQ, loss_grad):
    """``dL/dtheta`` from the exact steady-state derivative."""
    return exact_steady_gradient(chain, ss, Z, dQ) @ np.asarray(loss_grad, dtype=float)


def _stopped_series(P, v, p, n_terms):
    """Partial sums ``S_X = sum_{t<X} P^t v / (1-p)^t`` for ``X = 1..n_terms``."""
    out = np.empty((n_terms, v.size))
    term = v.astype(float).copy()
    acc = np.zeros_like(term)
    w = 1.0
    for t in range(n_terms):
        acc = acc + term / w
        out[t] = acc
        term = P @ term
        w *= 1.0 - p
    return out


def sample_stopped_gradient(chain, ss, dQ, loss_grad, rule: StoppingRule,
                            rng=None, draw=None):
    """Randomly stopped unbiased estimate of ``dL/dtheta``.

    Draws ``X ~ Geometric(p)`` on ``{1, 2, ...}`` and returns, per parameter,
    ``sum_n loss_grad_n * (pi^T dP_k sum_{t=0}^{X-1} P^t / Pr[X > t])_n``.
    Since ``E[1{X > t}] = Pr[X > t]`` each series term is reweighted by
    exactly its inclusion probability. The sum is contracted with
    ``loss_grad`` first, so only ``X`` matrix-vector products are needed
    however many parameters there are.

    Parameters
    ----------
    rng : numpy.random.Generator, optional
        Source of the stopping draw; defaults to one seeded by ``rule.rng_seed``.
    draw : int, optional
        Force the stopping time instead of sampling it.
    """
    pi = ss.pi if isinstance(ss, SteadyState) else np.asarray(ss, dtype=float)
    if draw is None:
        rng = np.random.default_rng(rule.rng_seed) if rng is None else rng
        draw = int(rng.geometric(rule.p))
    if draw < 1:
        raise ValueError("stopping time must be >= 1")
    u = _stopped_series(chain.P, np.asarray(loss_grad, dtype=float), rule.p, draw)[-1]
    coeff = pi @ dp_dtheta(chain, dQ)
    return GradientEstimate(values=np.atleast_1d(coeff @ u), engine="infsgd",
                            draw=draw, seed=rule.rng_seed)


def stopped_gradient_samples(chain, ss, dQ, loss_grad, p, n, rng):
    """``n`` independent stopped estimates at once, shape ``(n, n_params)``.

    Shares one pass over the series between all draws; used for Monte-Carlo
    checks of unbiasedness and variance.
    """
    pi = ss.pi if isinstance(ss, SteadyState) else np.asarray(ss, dtype=float)
    draws = rng.geometric(p, size=n)
    sums = _stopped_series(chain.P, np.asarray(loss_grad, dtype=float), p, int(draws.max()))
    coeff = np.atleast_2d(pi @ dp_dtheta(chain, dQ))
    per_length = sums @ coeff.T  # (max_draw, n_params)
    return per_length[draws - 1], draws


def dcbptt_forward(P, T):
    """``[P, P^2, P^4, ..., P^(2^T)]``."""
    mats = [P]
    for _ in range(T):
        mats.append(mats[-1] @ mats[-1])
    return mats


def dcbptt_from_chain(chain, dQ, window, obs, T, p0=None):
    """Loss and gradient through ``p0^T P^(2^T)`` by reverse-mode over the squarings."""
    if T < 1:
        raise ValueError("T must be >= 1")
    n = chain.n_states
    p0 = np.full(n, 1.0 / n) if p0 is None else np.asarray(p0, dtype=float)
    mats = dcbptt_forward(chain.P, T)
    pi_T = p0 @ mats[-1]
    loss = window_nll(window, pi_T, obs)
    lg = nll_grad_pi(window, pi_T, obs)
    adj = np.outer(p0, lg)
    for A in reversed(mats[:-1]):
        # C = A A  =>  A_bar = C_bar A^T + A^T C_bar
        adj = adj @ A.T + A.T @ adj
    dP = dp_dtheta(chain, dQ)
    grad = np.tensordot(dP, adj, axes=([-2, -1], [0, 1]))
    return loss, np.atleast_1d(grad)


def dcbptt_loss_grad(model, x, theta, window, obs, T, relax=None, slack=0.01, p0=None):
    """Divide-and-conquer BPTT loss and gradient for one window.

    Returns
    -------
    loss : float
        ``window_nll`` evaluated at ``p0^T P^(2^T)``.
    grad : GradientEstimate
    """
    Q = model.rate_matrix(x, theta)
    if relax is not None:
        Q = apply_relaxation(Q, relax)
    chain = uniformize(Q, slack)
    loss, grad = dcbptt_from_chain(chain, model.rate_jacobians(), window, obs, T, p0)
    return loss, GradientEstimate(values=grad, engine="dcbptt")
