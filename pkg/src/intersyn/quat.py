"""Quaternion algebra on numpy arrays.

Quaternions are stored as (..., 4) arrays in (w, x, y, z) order and follow
the Hamilton product convention. All functions broadcast over leading axes.
"""

from __future__ import annotations

import numpy as np

from .errors import NonUnit, ZeroNorm

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Scale to unit norm. Raises ZeroNorm for degenerate input."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ZeroNorm("quaternion norm below 1e-12")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w1, x1, y1, z1 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    w2, x2, y2, z2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_inverse(q: np.ndarray) -> np.ndarray:
    """Inverse quaternion: conjugate / squared norm (conjugate for unit q)."""
    q = np.asarray(q, dtype=float)
    n2 = np.sum(q * q, axis=-1, keepdims=True)
    if np.any(np.sqrt(n2) < 1e-12):
        raise ZeroNorm("cannot invert quaternion with norm below 1e-12")
    conj = q * np.array([1.0, -1.0, -1.0, -1.0])
    return conj / n2


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=float) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Unit quaternion -> (..., 3, 3) rotation matrix. Raises NonUnit."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1)
    if np.any(np.abs(n - 1.0) > 1e-6):
        raise NonUnit("quat_to_rot requires unit quaternions (|norm - 1| <= 1e-6)")
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    rot = np.empty(q.shape[:-1] + (3, 3))
    rot[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    rot[..., 0, 1] = 2.0 * (xy - wz)
    rot[..., 0, 2] = 2.0 * (xz + wy)
    rot[..., 1, 0] = 2.0 * (xy + wz)
    rot[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    rot[..., 1, 2] = 2.0 * (yz - wx)
    rot[..., 2, 0] = 2.0 * (xz - wy)
    rot[..., 2, 1] = 2.0 * (yz + wx)
    rot[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return rot


def rot_to_quat(rot: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion with w >= 0 (Shepperd's method)."""
    rot = np.asarray(rot, dtype=float)
    single = rot.ndim == 2
    r = rot.reshape(-1, 3, 3)
    n = r.shape[0]
    q = np.empty((n, 4))
    tr = r[:, 0, 0] + r[:, 1, 1] + r[:, 2, 2]
    # Branch per element on the largest diagonal entry for stability.
    for i in range(n):
        m = r[i]
        if tr[i] > 0.0:
            s = np.sqrt(tr[i] + 1.0) * 2.0
            q[i] = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q[i] = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif m[1, 1] > m[2, 2]:
            s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            q[i] = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            q[i] = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        if q[i, 0] < 0.0:
            q[i] = -q[i]
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    if single:
        return q[0]
    return q.reshape(rot.shape[:-2] + (4,))


def quat_from_axis_angle(axis: np.ndarray, angle) -> np.ndarray:
    """Unit quaternion for a rotation of `angle` radians about `axis`."""
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    n = np.linalg.norm(axis, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ZeroNorm("rotation axis has zero norm")
    u = axis / n
    half = angle / 2.0
    s = np.sin(half)
    w = np.cos(half)
    return np.stack(
        [w, u[..., 0] * s, u[..., 1] * s, u[..., 2] * s],
        axis=-1,
    )


def rotate_vec(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v by unit quaternions q (sandwich product)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    qv = q[..., 1:]
    w = q[..., :1]
    # v' = v + 2 w (qv x v) + 2 qv x (qv x v)
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def quat_angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Geodesic angle between rotations (sign-invariant), in radians."""
    a = quat_normalize(a)
    b = quat_normalize(b)
    d = np.clip(np.abs(np.sum(a * b, axis=-1)), 0.0, 1.0)
    return 2.0 * np.arccos(d)


def slerp(a: np.ndarray, b: np.ndarray, t) -> np.ndarray:
    """Spherical interpolation along the shortest arc.

    Endpoints are exact: t=0 gives a, t=1 gives b (up to sign of b). Falls
    back to normalized lerp when the inputs are nearly parallel.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.asarray(t, dtype=float)[..., None]
    dot = np.sum(a * b, axis=-1, keepdims=True)
    b = np.where(dot < 0.0, -b, b)
    dot = np.abs(dot)
    dot = np.clip(dot, -1.0, 1.0)

    theta = np.arccos(dot)
    sin_theta = np.sin(theta)
    near = dot > 1.0 - 1e-6
    # Avoid 0/0 in the degenerate branch; the result there is overwritten.
    safe_sin = np.where(near, 1.0, sin_theta)
    w_a = np.where(near, 1.0 - t, np.sin((1.0 - t) * theta) / safe_sin)
    w_b = np.where(near, t, np.sin(t * theta) / safe_sin)
    out = w_a * a + w_b * b
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def quat_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Minimal rotation taking direction u to direction v.

    Antiparallel inputs get a deterministic 180-degree rotation about an
    axis perpendicular to u.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(nu < 1e-12) or np.any(nv < 1e-12):
        raise ZeroNorm("quat_between requires nonzero directions")
    u = u / nu
    v = v / nv
    dot = np.sum(u * v, axis=-1)
    axis = np.cross(u, v)
    w = 1.0 + dot
    q = np.concatenate([w[..., None], axis], axis=-1)

    anti = w < 1e-9
    if np.any(anti):
        q = np.array(q, copy=True)
        # Any axis orthogonal to u works; pick the more stable of two.
        alt1 = np.cross(u, np.broadcast_to([1.0, 0.0, 0.0], u.shape))
        alt2 = np.cross(u, np.broadcast_to([0.0, 1.0, 0.0], u.shape))
        n1 = np.linalg.norm(alt1, axis=-1, keepdims=True)
        alt = np.where(n1 > 1e-6, alt1, alt2)
        alt = alt / np.linalg.norm(alt, axis=-1, keepdims=True)
        flip = np.concatenate([np.zeros(u.shape[:-1] + (1,)), alt], axis=-1)
        q[anti] = flip[anti]
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def rot_to_cont6d(rot: np.ndarray) -> np.ndarray:
    """First two matrix columns, flattened: the continuous 6D representation."""
    rot = np.asarray(rot, dtype=float)
    return np.concatenate([rot[..., :, 0], rot[..., :, 1]], axis=-1)


def cont6d_to_rot(d6: np.ndarray) -> np.ndarray:
    """Gram-Schmidt reconstruction of a rotation matrix from 6D form."""
    d6 = np.asarray(d6, dtype=float)
    a = d6[..., :3]
    b = d6[..., 3:]
    x = a / np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), 1e-12)
    b = b - np.sum(x * b, axis=-1, keepdims=True) * x
    y = b / np.maximum(np.linalg.norm(b, axis=-1, keepdims=True), 1e-12)
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)
