"""Finite-horizon discrete LQ problems with affine cost terms.

The canonical problem solved here is::

    min  sum_{k<N} [ 1/2 x_k' Q_k x_k + q_k' x_k + 1/2 u_k' R_k u_k + r_k' u_k ]
         + 1/2 x_N' Q_N x_N + q_N' x_N
    s.t. x_{k+1} = A_k x_k + B_k u_k,   x_0 given

whose optimal policy is ``u_k = K_k x_k + kff_k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solve_discrete_are

from . import _kernels


class RiccatiError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class AffinePolicy:
    K: NDArray[np.float64]    # (N, m, n)
    kff: NDArray[np.float64]  # (N, m)
    P: NDArray[np.float64]    # (N + 1, n, n) value Hessians
    Quu_inv: NDArray[np.float64] | None = None  # (N, m, m), kept for feedforward re-solves

    @property
    def horizon(self) -> int:
        return self.K.shape[0]


def _seq(M, N):
    M = np.asarray(M, dtype=float)
    return np.broadcast_to(M, (N,) + M.shape[-2:]) if M.ndim == 2 else M


def _stack(M, N):
    return np.ascontiguousarray(_seq(M, N), dtype=float)


def solve_lq(A, B, Q, R, QN, N, q=None, r=None, qN=None) -> AffinePolicy:
    """Backward Riccati recursion for the canonical affine LQ problem.

    ``A, B, Q, R`` may be single matrices (time-invariant) or stacks of
    length ``N``. Linear terms default to zero.
    """
    A = _seq(A, N)
    B = _seq(B, N)
    Q = _seq(Q, N)
    R = _seq(R, N)
    n, m = B.shape[1], B.shape[2]
    q = np.zeros((N, n)) if q is None else np.asarray(q, dtype=float)
    r = np.zeros((N, m)) if r is None else np.asarray(r, dtype=float)
    S = np.array(QN, dtype=float)
    s = np.zeros(n) if qN is None else np.array(qN, dtype=float)

    K = np.empty((N, m, n))
    kff = np.empty((N, m))
    P = np.empty((N + 1, n, n))
    Quu_inv = np.empty((N, m, m))
    P[N] = S
    for k in range(N - 1, -1, -1):
        Ak, Bk = A[k], B[k]
        SB = S @ Bk
        Quu = R[k] + Bk.T @ SB
        Qux = SB.T @ Ak
        Qu = r[k] + Bk.T @ s
        try:
            L = np.linalg.cholesky(Quu)
        except np.linalg.LinAlgError:
            raise RiccatiError(f"R + B'PB is not positive definite at step {k}") from None
        Linv = np.linalg.inv(L)
        Qi = Linv.T @ Linv
        Kk = -Qi @ Qux
        kk = -Qi @ Qu
        S = Q[k] + Ak.T @ S @ Ak + Qux.T @ Kk
        S = 0.5 * (S + S.T)
        s = q[k] + Ak.T @ s + Qux.T @ kk
        if not np.all(np.isfinite(S)):
            raise RiccatiError(f"Riccati recursion diverged at step {k}")
        K[k] = Kk
        kff[k] = kk
        P[k] = S
        Quu_inv[k] = Qi
    return AffinePolicy(K, kff, P, Quu_inv)


def resolve_feedforward(policy: AffinePolicy, A, B, q, r, qN) -> AffinePolicy:
    """Re-solve only the affine terms, reusing the gains of ``policy``.

    The Riccati matrices do not depend on ``q, r, qN``, so a problem that only
    changes its linear cost terms can skip the quadratic backward pass.
    """
    if policy.Quu_inv is None:
        raise ValueError("policy carries no factorization")
    N = policy.horizon
    kff = _kernels.affine_backward(
        policy.Quu_inv, policy.P, _stack(A, N), _stack(B, N),
        np.ascontiguousarray(q, dtype=float), np.ascontiguousarray(r, dtype=float), np.asarray(qN, dtype=float),
    )
    return AffinePolicy(policy.K, kff, policy.P, policy.Quu_inv)


def rollout_linear(A, B, policy: AffinePolicy, x0, c=None):
    """Apply an affine policy to ``x+ = A x + B u (+ c)``; returns states and controls."""
    N = policy.horizon
    x0 = np.asarray(x0, dtype=float)
    if c is None:
        return _kernels.affine_rollout(_stack(A, N), _stack(B, N), policy.K, policy.kff, x0)
    A = _seq(A, N)
    B = _seq(B, N)
    xs = np.empty((N + 1, len(x0)))
    us = np.empty((N, policy.K.shape[1]))
    xs[0] = x0
    for k in range(N):
        us[k] = policy.K[k] @ xs[k] + policy.kff[k]
        xs[k + 1] = A[k] @ xs[k] + B[k] @ us[k] + c[k]
    return xs, us


def stationary_gain(A, B, Q, R) -> NDArray[np.float64]:
    """Infinite-horizon LQR gain for ``u = K x`` (cost ``x'Qx + u'Ru``)."""
    P = solve_discrete_are(A, B, Q, R)
    return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
