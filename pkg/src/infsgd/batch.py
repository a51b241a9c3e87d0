"""Vectorised per-epoch evaluation over all training windows at once.

The per-window functions in :mod:`infsgd.gradients` are the reference; this
module evaluates the same quantities on stacks of shape ``(M, n, n)`` so that
an epoch costs a handful of numpy calls rather than ``M`` Python round
trips. The test-suite checks both paths against each other.
"""
from __future__ import annotations

import numpy as np

from .exceptions import DegenerateChain, ZeroMass, ZeroProbabilityObserved
from .likelihood import PI_FLOOR


def rate_matrices(model, xs, theta, q_tilde=None):
    """``Q(x_m, theta)`` (plus the relaxation) for every load, shape ``(M, n, n)``."""
    n = model.n_states
    xs = np.asarray(xs, dtype=float)
    base = np.tensordot(np.asarray(theta, dtype=float), model.rate_jacobians(), axes=1)
    Q = np.broadcast_to(base, (xs.size, n, n)).copy()
    idx = np.arange(n - 1)
    Q[:, idx, idx + 1] += xs[:, None]
    if q_tilde is not None:
        qt = np.array(q_tilde, dtype=float)
        np.fill_diagonal(qt, 0.0)
        Q += np.maximum(qt, 0.0)
    d = np.arange(n)
    Q[:, d, d] = 0.0
    Q[:, d, d] = -Q.sum(axis=2)
    return Q


def uniformize(Q, slack):
    n = Q.shape[-1]
    d = np.arange(n)
    top = (-Q[:, d, d]).max(axis=1)
    gamma = np.where(top > 0, top * (1.0 + slack), slack)
    P = np.eye(n)[None] + Q / gamma[:, None, None]
    return np.clip(P, 0.0, 1.0), gamma


def steady_states(P):
    """Batched GTH elimination; same arithmetic as the single-chain solver."""
    A = np.array(P, dtype=float)
    M, n, _ = A.shape
    for k in range(n - 1, 0, -1):
        s = A[:, k, :k].sum(axis=1)
        if np.any(~(s > 0)):
            bad = int(np.nonzero(~(s > 0))[0][0])
            raise DegenerateChain(f"window {bad}: chain is reducible")
        A[:, :k, k] /= s[:, None]
        A[:, :k, :k] += A[:, :k, k, None] * A[:, k, None, :k]
    pi = np.zeros((M, n))
    pi[:, 0] = 1.0
    for k in range(1, n):
        pi[:, k] = np.einsum("mi,mi->m", pi[:, :k], A[:, :k, k])
    return pi / pi.sum(axis=1, keepdims=True)


def count_matrix(windows, n_states):
    return np.stack([w.count_vector(n_states) for w in windows])


def nll_and_grad(Y, pi, obs):
    """Per-window conditional NLL and its gradient in ``pi``."""
    po = pi[:, obs]
    yo = Y[:, obs]
    mass = po.sum(axis=1)
    if np.any(~(mass > PI_FLOOR)):
        bad = int(np.nonzero(~(mass > PI_FLOOR))[0][0])
        raise ZeroMass(f"window {bad}: observed states carry no probability")
    if np.any((yo > 0) & (po < PI_FLOOR)):
        bad = int(np.nonzero(((yo > 0) & (po < PI_FLOOR)).any(axis=1))[0][0])
        raise ZeroProbabilityObserved(f"window {bad}: observed state has zero probability")
    safe = np.maximum(po, PI_FLOOR)
    logs = np.where(yo > 0, np.log(safe) - np.log(mass)[:, None], 0.0)
    nll = -(yo * logs).sum(axis=1)
    g = np.zeros_like(pi)
    g[:, obs] = np.where(yo > 0, -yo / safe, 0.0) + yo.sum(axis=1, keepdims=True) / mass[:, None]
    return nll, g


def dp_contract(Q, gamma, slack, J, left, right):
    """``left_m^T dP_{m,k} right_m`` for every window ``m`` and parameter ``k``.

    ``dP_{m,k} = J_k / gamma_m - Q_m * dgamma_{m,k} / gamma_m^2`` where
    ``dgamma_{m,k} = (1 + slack) * (-J_k[r_m, r_m])`` for the attaining row
    ``r_m`` of window ``m``.
    """
    n = Q.shape[-1]
    d = np.arange(n)
    r = np.argmax(-Q[:, d, d], axis=1)
    first = np.einsum("mi,kij,mj->mk", left, J, right) / gamma[:, None]
    top = (-Q[:, d, d]).max(axis=1)
    slope = np.where(top > 0, 1.0 + slack, 0.0)
    dgamma = slope[:, None] * (-J[:, r, r].T)  # (M, k)
    qform = np.einsum("mi,mij,mj->m", left, Q, right)
    return first - dgamma * (qform / gamma**2)[:, None]


def stopped_series(P, v, draws, p):
    """``sum_{t < X_m} P_m^t v_m / (1 - p)^t`` for each window's own draw ``X_m``."""
    acc = np.zeros_like(v)
    term = v.copy()
    w = 1.0
    for t in range(int(draws.max())):
        live = (t < draws)[:, None]
        acc = acc + np.where(live, term / w, 0.0)
        term = np.einsum("mij,mj->mi", P, term)
        w *= 1.0 - p
    return acc


def dcbptt(P, Y, obs, T, p0=None):
    """Batched loss and ``A_bar_0`` adjoint of ``p0^T P^(2^T)``."""
    M, n, _ = P.shape
    p0 = np.full(n, 1.0 / n) if p0 is None else np.asarray(p0, dtype=float)
    mats = [P]
    for _ in range(T):
        mats.append(mats[-1] @ mats[-1])
    pi_T = np.einsum("i,mij->mj", p0, mats[-1])
    loss, lg = nll_and_grad(Y, pi_T, obs)
    adj = p0[None, :, None] * lg[:, None, :]
    for A in reversed(mats[:-1]):
        At = np.swapaxes(A, 1, 2)
        adj = adj @ At + At @ adj
    return loss, adj


def adjoint_contract(Q, gamma, slack, J, adj):
    """``sum_ij adj_m[i, j] dP_{m,k}[i, j]`` for every window and parameter."""
    n = Q.shape[-1]
    d = np.arange(n)
    r = np.argmax(-Q[:, d, d], axis=1)
    first = np.einsum("mij,kij->mk", adj, J) / gamma[:, None]
    top = (-Q[:, d, d]).max(axis=1)
    slope = np.where(top > 0, 1.0 + slack, 0.0)
    dgamma = slope[:, None] * (-J[:, r, r].T)
    qform = np.einsum("mij,mij->m", adj, Q)
    return first - dgamma * (qform / gamma**2)[:, None]
