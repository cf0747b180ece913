"""Minimal quaternion algebra for attitude bookkeeping.

Scalar-first convention [w, x, y, z], unit quaternions represent
rotations from the body frame to the world frame.
"""

from __future__ import annotations

import numpy as np


def identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("cannot normalize a zero quaternion")
    return q / n


def conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a (x) b."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def from_rotvec(phi: np.ndarray) -> np.ndarray:
    """Axis-angle exponential; safe for small angles via the sinc form."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    # sin(angle/2)/angle written with np.sinc to avoid the 0/0 limit
    half_sinc = 0.5 * np.sinc(angle / (2.0 * np.pi))
    return np.concatenate(([np.cos(angle / 2.0)], half_sinc * phi))


def to_rotation_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_angle(q: np.ndarray) -> float:
    """Geodesic rotation angle of q in radians, in [0, pi]."""
    w = abs(q[0])
    v = np.linalg.norm(q[1:])
    return 2.0 * float(np.arctan2(v, w))


def small_angle_error(q_ref: np.ndarray, q_est: np.ndarray) -> np.ndarray:
    """Rotation-vector error taking q_ref to q_est (small-angle form)."""
    dq = multiply(conjugate(q_ref), q_est)
    if dq[0] < 0.0:
        dq = -dq
    return 2.0 * dq[1:]
