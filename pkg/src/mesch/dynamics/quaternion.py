"""Quaternion algebra, scalar-first Hamilton convention.

A quaternion ``q = [q_s, q_x, q_y, q_z]`` maps body vectors into the world
frame: ``v_W = q ⊗ [0, v_B] ⊗ q*``.
"""

from __future__ import annotations

import warnings

import numpy as np
from numpy.typing import ArrayLike, NDArray

UNIT_TOL = 1e-6

# Embeds a 3-vector as a quaternion with zero scalar part.
H = np.vstack([np.zeros((1, 3)), np.eye(3)])


def hat(v: ArrayLike) -> NDArray[np.float64]:
    """Skew-symmetric matrix such that ``hat(v) @ w == cross(v, w)``."""
    x1, x2, x3 = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -x3, x2],
        [x3, 0.0, -x1],
        [-x2, x1, 0.0],
    ])


def _as_unit(q: ArrayLike) -> NDArray[np.float64]:
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > UNIT_TOL:
        warnings.warn(f"quaternion norm {norm:.3g} is not unit; normalizing", RuntimeWarning, stacklevel=3)
        q = q / norm
    return q


def quat_left(q: ArrayLike) -> NDArray[np.float64]:
    """Left-multiplication matrix: ``quat_left(q) @ p == q ⊗ p``."""
    q = _as_unit(q)
    qs, qv = q[0], q[1:]
    L = np.empty((4, 4))
    L[0, 0] = qs
    L[0, 1:] = -qv
    L[1:, 0] = qv
    L[1:, 1:] = qs * np.eye(3) + hat(qv)
    return L


def quat_right(q: ArrayLike) -> NDArray[np.float64]:
    """Right-multiplication matrix: ``quat_right(q) @ p == p ⊗ q``."""
    q = np.asarray(q, dtype=float)
    qs, qv = q[0], q[1:]
    R = np.empty((4, 4))
    R[0, 0] = qs
    R[0, 1:] = -qv
    R[1:, 0] = qv
    R[1:, 1:] = qs * np.eye(3) - hat(qv)
    return R


def quat_mul(q: ArrayLike, p: ArrayLike) -> NDArray[np.float64]:
    """Hamilton product written out component-wise."""
    a1, b1, c1, d1 = np.asarray(q, dtype=float)
    a2, b2, c2, d2 = np.asarray(p, dtype=float)
    return np.array([
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    ])


def quat_conj(q: ArrayLike) -> NDArray[np.float64]:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def rotation_matrix(q: ArrayLike) -> NDArray[np.float64]:
    """World-from-body rotation matrix of a unit quaternion."""
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


def attitude_jacobian(q: ArrayLike) -> NDArray[np.float64]:
    """Tangent map ``G(q) = L(q) H`` from a 3-parameter attitude error to ``dq``."""
    return quat_left(q) @ H


def attitude_error(q: ArrayLike, q_ref: ArrayLike) -> NDArray[np.float64]:
    """Vector part of ``q_ref* ⊗ q``; to first order equals ``G(q_ref)^T (q - q_ref)``."""
    return quat_mul(quat_conj(q_ref), q)[1:]


def axis_angle(axis: ArrayLike, angle: float) -> NDArray[np.float64]:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])
