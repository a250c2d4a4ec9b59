"""Compiled closed-loop rollouts used on the per-iteration hot path.

These mirror ``dynamics.quadrotor_deriv`` / ``dynamics.rk4_step`` exactly;
the test suite checks them against the reference numpy implementations.

Parameter packing:
    quadrotor ``P``: ``[mass, g, arm, km, J (9, row-major), J_inv (9)]``
    battery ``batt``: ``[kind, rate, alpha_coef, alpha_power]`` with kind 0 =
    constant rate, kind 1 = ``rate * alpha(|u|^2)``.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def battery_rate(u, batt):
    if batt[0] == 0.0:
        return -batt[1]
    s = 0.0
    for i in range(u.shape[0]):
        s += u[i] * u[i]
    return -batt[1] * batt[2] * s ** batt[3]


@njit(cache=True, nogil=True)
def quad_deriv(x, u, P, out):
    m = P[0]
    g = P[1]
    arm = P[2]
    km = P[3]
    qw, qx, qy, qz = x[3], x[4], x[5], x[6]
    wx, wy, wz = x[10], x[11], x[12]
    out[0] = x[7]
    out[1] = x[8]
    out[2] = x[9]
    # q_dot = 0.5 * q ⊗ [0, w]
    out[3] = 0.5 * (-qx * wx - qy * wy - qz * wz)
    out[4] = 0.5 * (qw * wx + qy * wz - qz * wy)
    out[5] = 0.5 * (qw * wy - qx * wz + qz * wx)
    out[6] = 0.5 * (qw * wz + qx * wy - qy * wx)
    T = u[0] + u[1] + u[2] + u[3]
    out[7] = 2.0 * (qx * qz + qw * qy) * T / m
    out[8] = 2.0 * (qy * qz - qw * qx) * T / m
    out[9] = (qw * qw - qx * qx - qy * qy + qz * qz) * T / m - g
    tx = arm * (u[1] - u[3])
    ty = arm * (u[2] - u[0])
    tz = km * (u[0] - u[1] + u[2] - u[3])
    Jw0 = P[4] * wx + P[5] * wy + P[6] * wz
    Jw1 = P[7] * wx + P[8] * wy + P[9] * wz
    Jw2 = P[10] * wx + P[11] * wy + P[12] * wz
    r0 = tx - (wy * Jw2 - wz * Jw1)
    r1 = ty - (wz * Jw0 - wx * Jw2)
    r2 = tz - (wx * Jw1 - wy * Jw0)
    out[10] = P[13] * r0 + P[14] * r1 + P[15] * r2
    out[11] = P[16] * r0 + P[17] * r1 + P[18] * r2
    out[12] = P[19] * r0 + P[20] * r1 + P[21] * r2


@njit(cache=True, nogil=True)
def quad_rk4(x, u, dt, P):
    n = 13
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    quad_deriv(x, u, P, k1)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k1[i]
    quad_deriv(tmp, u, P, k2)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k2[i]
    quad_deriv(tmp, u, P, k3)
    for i in range(n):
        tmp[i] = x[i] + dt * k3[i]
    quad_deriv(tmp, u, P, k4)
    out = np.empty(n)
    for i in range(n):
        out[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    nq = np.sqrt(out[3] ** 2 + out[4] ** 2 + out[5] ** 2 + out[6] ** 2)
    for i in range(3, 7):
        out[i] /= nq
    return out


@njit(cache=True, nogil=True)
def quad_error(x, xr, out):
    """Reduced 12-dim error ``[dr, vec(q_ref* ⊗ q), dv, dw]``."""
    for i in range(3):
        out[i] = x[i] - xr[i]
        out[6 + i] = x[7 + i] - xr[7 + i]
        out[9 + i] = x[10 + i] - xr[10 + i]
    aw, ax, ay, az = xr[3], -xr[4], -xr[5], -xr[6]
    bw, bx, by, bz = x[3], x[4], x[5], x[6]
    out[3] = aw * bx + ax * bw + ay * bz - az * by
    out[4] = aw * by - ax * bz + ay * bw + az * bx
    out[5] = aw * bz + ax * by - ay * bx + az * bw


@njit(cache=True, nogil=True)
def rollout_quad(x0, e0, xref, uff, K, dt, P, batt):
    """Closed loop ``u_k = uff_k + K_k @ err(x_k, xref_k)`` through the nonlinear quadrotor."""
    N = uff.shape[0]
    xs = np.empty((N + 1, 13))
    us = np.empty((N, 4))
    es = np.empty(N + 1)
    err = np.empty(12)
    xs[0] = x0
    es[0] = e0
    for k in range(N):
        quad_error(xs[k], xref[k], err)
        for a in range(4):
            acc = uff[k, a]
            for b in range(12):
                acc += K[k, a, b] * err[b]
            us[k, a] = acc
        xs[k + 1] = quad_rk4(xs[k], us[k], dt, P)
        es[k + 1] = es[k] + dt * battery_rate(us[k], batt)
    return xs, us, es


@njit(cache=True, nogil=True)
def rollout_lti(x0, e0, xref, uff, K, Ad, Bd, dt, batt):
    """Closed loop ``u_k = uff_k + K_k @ (x_k - xref_k)`` through ``x+ = Ad x + Bd u``."""
    N = uff.shape[0]
    n = x0.shape[0]
    m = uff.shape[1]
    xs = np.empty((N + 1, n))
    us = np.empty((N, m))
    es = np.empty(N + 1)
    xs[0] = x0
    es[0] = e0
    for k in range(N):
        for a in range(m):
            acc = uff[k, a]
            for b in range(n):
                acc += K[k, a, b] * (xs[k, b] - xref[k, b])
            us[k, a] = acc
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += Ad[i, j] * xs[k, j]
            for j in range(m):
                acc += Bd[i, j] * us[k, j]
            xs[k + 1, i] = acc
        es[k + 1] = es[k] + dt * battery_rate(us[k], batt)
    return xs, us, es



@njit(cache=True, nogil=True)
def affine_backward(Quu_inv, P, A, B, q, r, qN):
    """Feedforward terms of an LQ problem whose gains are already known."""
    N = Quu_inv.shape[0]
    n = A.shape[1]
    m = B.shape[2]
    kff = np.empty((N, m))
    s = qN.copy()
    for k in range(N - 1, -1, -1):
        Ak = A[k]
        Bk = B[k]
        kk = -(Quu_inv[k] @ (r[k] + Bk.T @ s))
        kff[k] = kk
        s = q[k] + Ak.T @ s + Ak.T @ (P[k + 1] @ (Bk @ kk))
    return kff


@njit(cache=True, nogil=True)
def affine_rollout(A, B, K, kff, x0):
    N = K.shape[0]
    n = x0.shape[0]
    m = K.shape[1]
    xs = np.empty((N + 1, n))
    us = np.empty((N, m))
    xs[0] = x0
    for k in range(N):
        us[k] = K[k] @ xs[k] + kff[k]
        xs[k + 1] = A[k] @ xs[k] + B[k] @ us[k]
    return xs, us


@njit(cache=True, nogil=True)
def _unicycle_deriv(x, v, w, out):
    out[0] = v * np.cos(x[3])
    out[1] = v * np.sin(x[3])
    out[2] = 0.0
    out[3] = w


@njit(cache=True, nogil=True)
def unicycle_predict(mean, cov, u, W, dt, steps):
    """``steps`` EKF time updates of the planar unicycle charger ``[x, y, z, theta]``."""
    m = mean.copy()
    S = cov.copy()
    v, w = u[0], u[1]
    F = np.eye(4)
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    Wdt = W * dt
    for _ in range(steps):
        F[0, 3] = -dt * v * np.sin(m[3])
        F[1, 3] = dt * v * np.cos(m[3])
        _unicycle_deriv(m, v, w, k1)
        _unicycle_deriv(m + 0.5 * dt * k1, v, w, k2)
        _unicycle_deriv(m + 0.5 * dt * k2, v, w, k3)
        _unicycle_deriv(m + dt * k3, v, w, k4)
        m = m + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        S = F @ S @ F.T + Wdt
        S = 0.5 * (S + S.T)
    return m, S
