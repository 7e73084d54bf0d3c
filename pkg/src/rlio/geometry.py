"""Minimal SO(3) / unit-quaternion math used by all factor modules.

Conventions:
  - Quaternions are numpy arrays [w, x, y, z], Hamilton convention.
  - quat_mul(q1, q2) composes so that the rotation of q2 is applied first
    in the frame of q1, i.e. R(q1 * q2) = R(q1) @ R(q2).
  - Rotation vectors are in radians; log_so3 returns the principal value
    with angle in [0, pi].
"""

from __future__ import annotations

import numpy as np

# Below this rotation angle the Rodrigues terms switch to Taylor series.
SMALL_ANGLE = 1e-8


class GeometryError(ValueError):
    """Raised when an input fails a manifold validity check."""


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


# --------------------------------------------------------------------------- #
# Quaternions
# --------------------------------------------------------------------------- #

def quat_identity():
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q):
    return np.asarray(q, dtype=float) / np.linalg.norm(q)


def quat_mul(q1, q2):
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def vec_part(q):
    return np.asarray(q[1:4], dtype=float)


def quat_left(q):
    """4x4 matrix L with L @ p == quat_mul(q, p)."""
    w, x, y, z = q
    return np.array([
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ])


def quat_right(q):
    """4x4 matrix R with R @ p == quat_mul(p, q)."""
    w, x, y, z = q
    return np.array([
        [w, -x, -y, -z],
        [x, w, z, -y],
        [y, -z, w, x],
        [z, y, -x, w],
    ])


def quat_exp(v):
    """Unit quaternion for a rotation vector v (angle = |v|)."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    if angle < SMALL_ANGLE:
        q = np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]])
        return quat_normalize(q)
    axis = v / angle
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * axis))


def quat_log(q):
    """Rotation vector of a unit quaternion, angle in [0, pi]."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    vnorm = np.linalg.norm(q[1:4])
    if vnorm < SMALL_ANGLE:
        return 2.0 * q[1:4]
    angle = 2.0 * np.arctan2(vnorm, q[0])
    return (angle / vnorm) * q[1:4]


def quat_to_rot(q):
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R):
    """Quaternion of a rotation matrix, w >= 0 representative.

    Shepperd's method: branch on the largest of (trace, R00, R11, R22)
    for numerical stability at all angles.
    """
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    q = quat_normalize(q)
    if q[0] < 0:
        q = -q
    elif q[0] == 0.0:
        # pi rotation: resolve the +/- axis ambiguity canonically
        for c in q[1:4]:
            if c != 0.0:
                if c < 0:
                    q = -q
                break
    return q


# --------------------------------------------------------------------------- #
# SO(3) exponential / logarithm and Jacobians
# --------------------------------------------------------------------------- #

def exp_so3(v):
    """Rodrigues formula; exp_so3(0) == I."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    K = skew(v)
    if angle < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + a * K + b * (K @ K)


def check_rotation(R, tol=1e-6):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise GeometryError(f"expected 3x3 rotation matrix, got shape {R.shape}")
    if not np.allclose(R.T @ R, np.eye(3), atol=tol):
        raise GeometryError("matrix is not orthonormal")
    if np.linalg.det(R) < 0:
        raise GeometryError("matrix has negative determinant")
    return R


def log_so3(R, check: bool = True):
    """Principal rotation vector of R, angle in [0, pi].

    Goes through the quaternion representation, which stays well
    conditioned near angle pi (extraction from the largest diagonal).
    `check=False` skips the orthonormality validation (hot paths where
    the input is a product of known rotations).
    """
    if check:
        R = check_rotation(R)
    return quat_log(rot_to_quat(R))


def right_jacobian(v):
    """Jr with Exp(v + Jr(v) d) ~ Exp(v) Exp(d)."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    K = skew(v)
    if angle < SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    a2 = angle * angle
    return (np.eye(3)
            - (1.0 - np.cos(angle)) / a2 * K
            + (angle - np.sin(angle)) / (a2 * angle) * (K @ K))


def right_jacobian_inv(v):
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    K = skew(v)
    if angle < SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + (K @ K) / 12.0
    a2 = angle * angle
    c = 1.0 / a2 - (1.0 + np.cos(angle)) / (2.0 * angle * np.sin(angle))
    return np.eye(3) + 0.5 * K + c * (K @ K)


def left_jacobian(v):
    return right_jacobian(-np.asarray(v, dtype=float))


def left_jacobian_inv(v):
    return right_jacobian_inv(-np.asarray(v, dtype=float))
