"""Parametric rate-matrix families ``Q(x, theta)`` and the non-parametric relaxation.

Four families are built in:

``MM1K``
    single-server queue with capacity ``K`` (states ``0..K``).
``MMmK``
    ``m`` servers, death rate ``min(i, m) * theta`` out of state ``i``.
``MMMultipleK``
    ``d`` learnable lower bands, ``Q[i, i - b] = theta[b - 1]``.
``UpperTriangular``
    every lower-triangle entry is its own parameter; an extra overload state
    ``K + 1`` is entered on an arrival while the queue holds ``K`` requests.

In all families the superdiagonal is the request rate ``x`` and ``Q`` is
linear in ``theta``, so the per-parameter derivative matrices do not depend
on ``theta``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import (
    IndexOutOfRange,
    LengthMismatch,
    NonPositiveRate,
    SupportOverlap,
)

KINDS = ("MM1K", "MMmK", "MMMultipleK", "UpperTriangular")
EPS_FLOOR = 1e-6


@dataclass(frozen=True)
class ParametricModel:
    kind: str
    K: int
    m: int = 1
    d: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.kind == "MM1K" and self.m != 1:
            raise ValueError("MM1K has exactly one server")
        if self.kind == "MMmK" and not 1 <= self.m <= self.K:
            raise ValueError(f"MMmK needs 1 <= m <= K, got m={self.m}, K={self.K}")
        if self.kind == "MMMultipleK" and not 1 <= self.d <= self.K:
            raise ValueError(f"MMMultipleK needs 1 <= d <= K, got d={self.d}")

    @property
    def n_states(self):
        return self.K + 2 if self.kind == "UpperTriangular" else self.K + 1

    @property
    def n_params(self):
        if self.kind == "UpperTriangular":
            n = self.n_states
            return n * (n - 1) // 2
        if self.kind == "MMMultipleK":
            return self.d
        return 1

    @property
    def servers(self):
        return 1 if self.kind == "MM1K" else self.m

    @property
    def failure_states(self):
        """Default states whose steady-state mass is the loss probability."""
        return (self.n_states - 1,)

    def initial_theta(self, eps_floor=EPS_FLOOR):
        if self.kind == "UpperTriangular":
            return np.full(self.n_params, eps_floor)
        return np.ones(self.n_params)

    def lower_index(self):
        """(rows, cols) of the UpperTriangular parameters in flattening order."""
        return np.tril_indices(self.n_states, -1)

    def to_dict(self):
        out = {"kind": self.kind, "K": self.K}
        if self.kind == "MMmK":
            out["m"] = self.m
        if self.kind == "MMMultipleK":
            out["d"] = self.d
        return out

    @classmethod
    def from_dict(cls, spec):
        return cls(kind=spec["kind"], K=int(spec["K"]), m=int(spec.get("m", 1)),
                   d=int(spec.get("d", 3)))

    def _check(self, x, theta):
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.n_params:
            raise LengthMismatch(
                f"{self.kind} expects {self.n_params} parameters, got {theta.size}")
        if not x > 0:
            raise NonPositiveRate(f"request rate must be positive, got {x}")
        if np.any(theta < 0) or not np.all(np.isfinite(theta)):
            raise NonPositiveRate("service rates must be finite and nonnegative")
        return theta

    def _arrivals(self, x):
        n = self.n_states
        Q = np.zeros((n, n))
        idx = np.arange(n - 1)
        Q[idx, idx + 1] = x
        return Q

    def rate_jacobians(self):
        """Stack of ``dQ/dtheta_k``, shape ``(n_params, n, n)``, rows summing to 0.

        Cached per model and returned read-only.
        """
        return _jacobians(self)

    def _build_jacobians(self):
        n = self.n_states
        J = np.zeros((self.n_params, n, n))
        if self.kind in ("MM1K", "MMmK"):
            for i in range(1, n):
                J[0, i, i - 1] = min(i, self.servers)
        elif self.kind == "MMMultipleK":
            for b in range(1, self.d + 1):
                for i in range(b, n):
                    J[b - 1, i, i - b] = 1.0
        else:
            rows, cols = self.lower_index()
            J[np.arange(self.n_params), rows, cols] = 1.0
        diag = np.arange(n)
        J[:, diag, diag] = -J.sum(axis=2)
        J.flags.writeable = False
        return J

    def rate_matrix(self, x, theta):
        theta = self._check(x, theta)
        Q = self._arrivals(x)
        Q += np.tensordot(theta, self.rate_jacobians(), axes=1)
        # rebuild the diagonal so rows sum to exactly zero
        np.fill_diagonal(Q, 0.0)
        np.fill_diagonal(Q, -Q.sum(axis=1))
        return Q

    def structural_support(self):
        """Boolean mask of off-diagonal entries that are nonzero for positive rates."""
        Q = self.rate_matrix(1.0, np.ones(self.n_params))
        mask = Q != 0
        np.fill_diagonal(mask, False)
        return mask


@lru_cache(maxsize=64)
def _jacobians(model):
    return model._build_jacobians()


def build_rate_matrix(model, x, theta):
    return model.rate_matrix(x, theta)


def rate_jacobian(model, x, theta, k):
    """``dQ(x, theta)/dtheta_k`` including the diagonal compensation."""
    model._check(x, theta)
    if not 0 <= k < model.n_params:
        raise IndexOutOfRange(f"parameter index {k} outside [0, {model.n_params})")
    return model.rate_jacobians()[k]


@dataclass
class Relaxation:
    """Learnable non-parametric additive rates ``Q~`` with an ``alpha ||Q~||^2`` penalty.

    ``q_tilde`` lives only on off-diagonal entries where the parametric ``Q``
    is structurally zero; its diagonal is ignored.
    """

    q_tilde: np.ndarray
    alpha: float = 1.0

    @classmethod
    def zeros(cls, model, alpha=1.0):
        n = model.n_states
        return cls(q_tilde=np.zeros((n, n)), alpha=float(alpha))

    @property
    def penalty(self):
        off = self.q_tilde - np.diag(np.diag(self.q_tilde))
        return float(self.alpha * np.sum(off**2))

    @staticmethod
    def free_mask(model):
        mask = ~model.structural_support()
        np.fill_diagonal(mask, False)
        return mask

    def jacobians(self, model):
        """``dQ'/dQ~_ij`` for every free entry, in row-major order of the free mask."""
        rows, cols = np.nonzero(self.free_mask(model))
        n = model.n_states
        J = np.zeros((rows.size, n, n))
        idx = np.arange(rows.size)
        J[idx, rows, cols] = 1.0
        J[idx, rows, rows] = -1.0
        return J

    def free_values(self, model):
        return self.q_tilde[self.free_mask(model)]

    def with_free_values(self, model, values):
        q = np.zeros_like(self.q_tilde)
        q[self.free_mask(model)] = np.maximum(values, 0.0)
        return Relaxation(q_tilde=q, alpha=self.alpha)


def apply_relaxation(Q, relax):
    """``Q' = Q + Q~`` with the diagonal rebalanced so rows sum to zero."""
    Q = np.asarray(Q, dtype=float)
    qt = np.array(relax.q_tilde, dtype=float)
    np.fill_diagonal(qt, 0.0)
    qt = np.maximum(qt, 0.0)
    off = Q - np.diag(np.diag(Q))
    if np.any((qt != 0) & (off != 0)):
        raise SupportOverlap("relaxation overlaps structurally nonzero rates of Q")
    out = off + qt
    np.fill_diagonal(out, -out.sum(axis=1))
    return out
