"""Dense CTMC/DTMC kernel.

Uniformization, steady states, spectral gap, mixing time, repeated squaring
and the fundamental matrix. Everything here works on small dense numpy
arrays (tens of states) and returns new arrays; nothing is mutated in place.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    CapExceeded,
    DegenerateChain,
    EigenFailure,
    InvariantViolation,
    NonSquare,
    NotConverged,
    SingularSystem,
)

ROW_SUM_TOL = 1e-10
DEFAULT_SLACK = 0.01
DEFAULT_TOL = 1e-10
DEFAULT_MIX_CAP = 10**6


def check_rate_matrix(Q, tol=ROW_SUM_TOL):
    """Validate a generator matrix and return it as a float array.

    Rows must sum to zero (relative to the largest rate in the row),
    off-diagonals must be nonnegative and the diagonal nonpositive.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise NonSquare(f"rate matrix must be square, got shape {Q.shape}")
    if not np.all(np.isfinite(Q)):
        raise InvariantViolation("rate matrix has non-finite entries")
    off = Q - np.diag(np.diag(Q))
    if np.any(off < 0):
        raise InvariantViolation("rate matrix has negative off-diagonal entries")
    if np.any(np.diag(Q) > 0):
        raise InvariantViolation("rate matrix has positive diagonal entries")
    scale = np.maximum(1.0, np.abs(Q).max(axis=1))
    if np.any(np.abs(Q.sum(axis=1)) > tol * scale):
        raise InvariantViolation("rate matrix rows do not sum to zero")
    return Q


def check_stochastic(P, tol=ROW_SUM_TOL):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise NonSquare(f"stochastic matrix must be square, got shape {P.shape}")
    if np.any(P < -tol) or np.any(P > 1 + tol):
        raise InvariantViolation("stochastic matrix entries outside [0, 1]")
    if np.any(np.abs(P.sum(axis=1) - 1.0) > tol):
        raise InvariantViolation("stochastic matrix rows do not sum to one")
    return P


@dataclass(frozen=True)
class UniformizedChain:
    """Stochastic matrix ``P = I + Q / gamma`` together with its rate.

    ``slack`` is kept so that derivatives of ``gamma`` with respect to the
    rates can be reproduced; it is ``None`` for chains built directly from a
    stochastic matrix, in which case ``gamma`` is a nominal 1.
    """

    P: np.ndarray
    gamma: float
    slack: float | None = None
    Q: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_states(self):
        return self.P.shape[0]

    @classmethod
    def from_stochastic(cls, P):
        return cls(P=check_stochastic(P), gamma=1.0)

    @property
    def gamma_row(self):
        """Index of the row attaining ``max(-diag(Q))`` (lowest on ties)."""
        if self.Q is None:
            return None
        return int(np.argmax(-np.diag(self.Q)))


@dataclass(frozen=True)
class SteadyState:
    pi: np.ndarray
    residual: float
    initial: np.ndarray | None = None

    def __array__(self, dtype=None, copy=None):
        return self.pi if dtype is None else self.pi.astype(dtype)

    @property
    def Pi(self):
        """Matrix whose identical rows are ``pi``."""
        return np.tile(self.pi, (self.pi.size, 1))

    @property
    def p0(self):
        if self.initial is not None:
            return self.initial
        return np.full(self.pi.size, 1.0 / self.pi.size)


def uniformization_rate(Q, slack=DEFAULT_SLACK):
    if slack <= 0:
        raise ValueError("slack must be positive")
    top = float(np.max(-np.diag(Q)))
    return top * (1.0 + slack) if top > 0 else float(slack)


def uniformize(Q, slack=DEFAULT_SLACK):
    """Embed the CTMC ``Q`` at the events of a Poisson process of rate gamma.

    ``gamma = max(-diag(Q)) * (1 + slack)``, or ``slack`` itself when ``Q`` is
    identically zero.
    """
    Q = check_rate_matrix(Q)
    gamma = uniformization_rate(Q, slack)
    P = np.eye(Q.shape[0]) + Q / gamma
    # rounding can leave -1e-17 on the diagonal
    P = np.clip(P, 0.0, 1.0)
    return UniformizedChain(P=P, gamma=gamma, slack=float(slack), Q=Q)


def _as_matrix(chain):
    if isinstance(chain, UniformizedChain):
        return chain.P
    return check_stochastic(chain)


def _gth(P):
    """Grassmann-Taksar-Heyman elimination for ``pi^T (P - I) = 0``.

    Subtraction-free, so tiny stationary probabilities (1e-100 and below in
    heavily loaded queues) keep full relative accuracy.
    """
    A = np.array(P, dtype=float)
    n = A.shape[0]
    for k in range(n - 1, 0, -1):
        s = A[k, :k].sum()
        if not s > 0:
            raise DegenerateChain(
                f"state {k} cannot reach states 0..{k - 1}; chain is reducible")
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ A[:k, k]
    total = pi.sum()
    if not np.isfinite(total) or total <= 0:
        raise SingularSystem("steady-state elimination broke down")
    return pi / total


def steady_state(chain, tol=DEFAULT_TOL, max_iters=10**6, method="linear_solve"):
    """Stationary distribution of an ergodic chain.

    Parameters
    ----------
    chain : UniformizedChain or array_like
        The chain, or a row-stochastic matrix.
    tol : float
        ``power`` stops once the estimated sup-norm distance to ``pi`` is
        below ``tol``.
    max_iters : int
        Iteration cap for ``method="power"``.
    method : {"linear_solve", "power"}
        ``linear_solve`` is a direct elimination and serves as the oracle;
        ``power`` iterates ``v <- v P`` from the uniform vector.

    Returns
    -------
    SteadyState
    """
    P = _as_matrix(chain)
    n = P.shape[0]
    if method == "linear_solve":
        pi = _gth(P)
    elif method == "power":
        pi = np.full(n, 1.0 / n)
        prev_step = np.inf
        growth = 0
        for _ in range(max_iters):
            nxt = pi @ P
            step = np.abs(nxt - pi).max()
            pi = nxt
            # the distance to pi is about step / (1 - ratio) for geometric decay
            ratio = step / prev_step if np.isfinite(prev_step) and prev_step > 0 else 1.0
            if step <= tol and (step == 0 or (ratio < 1 and step / (1 - ratio) <= tol)):
                break
            # a periodic/reducible chain keeps oscillating at a fixed amplitude
            growth = growth + 1 if step >= prev_step * (1 - 1e-12) else 0
            if growth > 1000:
                raise DegenerateChain("power iteration oscillates; chain is not ergodic")
            prev_step = step
        else:
            raise NotConverged(max_iters, residual=step)
        pi = np.clip(pi, 0.0, None)
        pi = pi / pi.sum()
    else:
        raise ValueError(f"unknown steady-state method {method!r}")
    residual = float(np.abs(pi @ P - pi).max())
    return SteadyState(pi=pi, residual=residual)


def spectral_gap(chain):
    """``1 - max |lambda_i|`` over the non-Perron eigenvalues of ``P``."""
    P = _as_matrix(chain)
    try:
        lam = np.linalg.eigvals(P)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    mod = np.sort(np.abs(lam))[::-1]
    if mod.size == 1:
        return 1.0
    # the Perron root is the eigenvalue closest to 1, not necessarily mod[0]
    perron = int(np.argmin(np.abs(lam - 1.0)))
    rest = np.delete(np.abs(lam), perron)
    gap = 1.0 - float(rest.max())
    if gap <= 1e-12:
        raise DegenerateChain("spectral gap is zero; chain is reducible or periodic")
    return min(gap, 1.0)


def mixing_distance(Pt):
    """Largest squared deviation of a row of ``P^t`` from the column means."""
    dev = Pt - Pt.mean(axis=0, keepdims=True)
    return float((dev**2).sum(axis=1).max())


def mixing_time(chain, epsilon=1e-5, cap=DEFAULT_MIX_CAP):
    """Smallest ``t >= 1`` with ``mixing_distance(P^t) <= epsilon``."""
    P = _as_matrix(chain)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    A = P.copy()
    for t in range(1, cap + 1):
        if mixing_distance(A) <= epsilon:
            return t
        A = A @ P
    raise CapExceeded(cap)


def power_by_squaring(chain, T):
    """``P^(2^T)`` by ``T`` successive squarings."""
    if T < 1:
        raise ValueError("T must be >= 1")
    A = _as_matrix(chain)
    for _ in range(T):
        A = A @ A
    return A


def matrix_power(chain, t):
    """Naive ``P^t`` by repeated multiplication (used as an oracle)."""
    P = _as_matrix(chain)
    A = np.eye(P.shape[0])
    for _ in range(t):
        A = A @ P
    return A


def fundamental_matrix(chain, ss):
    """``Z = (I - P + Pi)^-1``.

    ``dP @ Z`` equals the convergent series ``sum_l dP @ P^l`` for any ``dP``
    with zero row sums.
    """
    P = _as_matrix(chain)
    pi = np.asarray(ss.pi if isinstance(ss, SteadyState) else ss, dtype=float)
    n = P.shape[0]
    A = np.eye(n) - P + np.outer(np.ones(n), pi)
    try:
        Z = np.linalg.solve(A, np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("I - P + Pi is singular") from exc
    if not np.all(np.isfinite(Z)):
        raise SingularSystem("I - P + Pi is numerically singular")
    return Z
