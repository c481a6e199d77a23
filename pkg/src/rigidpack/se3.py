"""Quaternion and rigid-transform algebra.

Conventions
-----------
- Quaternions are numpy arrays of shape (..., 4) in scalar-first order
  [s, qx, qy, qz]. All functions broadcast over leading dimensions.
- Vectors are arrays of shape (..., 3). Positions are in angstrom.
- A rigid transform T = (t, q) acts on a point x as R(q) x + t.
- q and -q encode the same rotation; ``canonicalize`` picks the
  representative with non-negative scalar part.

Unit quaternions are required wherever a rotation is applied; inputs
outside the tolerance are rejected rather than silently renormalized.
Use ``quat_normalize`` explicitly when renormalization is intended
(e.g. after an optimizer step).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-9


def _as_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != 4:
        raise ValueError(f"quaternion must have 4 components, got shape {q.shape}")
    return q


def _as_vec3(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 3:
        raise ValueError(f"expected 3-vector(s), got shape {v.shape}")
    return v


def require_unit(q, tol: float = UNIT_TOL) -> np.ndarray:
    """Validate |s^2 + v.v - 1| <= tol and return the array unchanged."""
    q = _as_quat(q)
    err = np.abs((q * q).sum(axis=-1) - 1.0)
    if np.any(err > tol):
        raise ValueError(f"quaternion is not unit (|q|^2 - 1 up to {float(np.max(err)):.3g})")
    return q


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_norm(q) -> np.ndarray:
    q = _as_quat(q)
    return np.sqrt((q * q).sum(axis=-1))


def quat_normalize(q) -> np.ndarray:
    q = _as_quat(q)
    n = quat_norm(q)
    if np.any(n == 0.0):
        raise ValueError("cannot normalize a zero quaternion")
    return q / n[..., None]


def quat_conjugate(q) -> np.ndarray:
    q = _as_quat(q)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_mul(q1, q2) -> np.ndarray:
    """Hamilton product [s1 s2 - v1.v2, s1 v2 + s2 v1 + v1 x v2]."""
    q1 = _as_quat(q1)
    q2 = _as_quat(q2)
    s1, v1 = q1[..., :1], q1[..., 1:]
    s2, v2 = q2[..., :1], q2[..., 1:]
    s = s1 * s2 - (v1 * v2).sum(axis=-1, keepdims=True)
    v = s1 * v2 + s2 * v1 + np.cross(v1, v2)
    return np.concatenate([s, v], axis=-1)


def quat_inverse(q) -> np.ndarray:
    """Inverse [s, -v] / |q|^2; rejects zero-norm input."""
    q = _as_quat(q)
    n2 = (q * q).sum(axis=-1, keepdims=True)
    if np.any(n2 == 0.0):
        raise ValueError("zero quaternion has no inverse")
    return quat_conjugate(q) / n2


def rotate_vector(q, v) -> np.ndarray:
    """Rotate 3-vector(s) by unit quaternion(s): v + 2 v_q x (v_q x v + s v)."""
    q = require_unit(q)
    v = _as_vec3(v)
    s, vq = q[..., :1], q[..., 1:]
    return v + 2.0 * np.cross(vq, np.cross(vq, v) + s * v)


def _rotate(q, v):
    # unchecked variant for internal hot paths; q assumed unit
    s, vq = q[..., :1], q[..., 1:]
    return v + 2.0 * np.cross(vq, np.cross(vq, v) + s * v)


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of unit quaternion(s), shape (..., 3, 3)."""
    q = require_unit(q)
    s, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row0 = np.stack([s * s + x * x - y * y - z * z, 2 * x * y - 2 * s * z, 2 * x * z + 2 * s * y], axis=-1)
    row1 = np.stack([2 * x * y + 2 * s * z, s * s - x * x + y * y - z * z, 2 * y * z - 2 * s * x], axis=-1)
    row2 = np.stack([2 * x * z - 2 * s * y, 2 * y * z + 2 * s * x, s * s - x * x - y * y + z * z], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def matrix_to_quat(R) -> np.ndarray:
    """Unit quaternion of a single 3x3 rotation matrix (canonical sign)."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {R.shape}")
    # Shepperd's method: pick the largest of the four squared components
    tr = np.trace(R)
    cand = np.array([tr, R[0, 0], R[1, 1], R[2, 2]])
    k = int(np.argmax(cand))
    if k == 0:
        s = np.sqrt(1.0 + tr) * 2.0
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif k == 1:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif k == 2:
        s = np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    return canonicalize(quat_normalize(q))


def canonicalize(q) -> np.ndarray:
    """Resolve the q/-q double cover: make s >= 0.

    Tie rule at s == 0: the first nonzero vector component is made
    positive. Idempotent.
    """
    q = _as_quat(q)
    out = np.array(q, copy=True)
    flat = out.reshape(-1, 4)
    for row in flat:
        if row[0] < 0.0:
            row *= -1.0
        elif row[0] == 0.0:
            for c in row[1:]:
                if c != 0.0:
                    if c < 0.0:
                        row *= -1.0
                    break
    return flat.reshape(q.shape)


def quat_dist_sq(q1, q2) -> np.ndarray:
    """Double-cover-corrected squared distance min(|q1-q2|^2, |q1+q2|^2)."""
    q1 = _as_quat(q1)
    q2 = _as_quat(q2)
    d_minus = ((q1 - q2) ** 2).sum(axis=-1)
    d_plus = ((q1 + q2) ** 2).sum(axis=-1)
    return np.minimum(d_minus, d_plus)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = _as_vec3(axis)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("rotation axis must be nonzero")
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_exp(omega) -> np.ndarray:
    """Unit quaternion for an axis-angle vector (angle = |omega|, radians).

    quat_exp(0) is the identity; safe for small angles.
    """
    omega = _as_vec3(omega)
    angle = np.linalg.norm(omega, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(x)/x -> series near zero to avoid 0/0
    small = angle < 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(small, 0.5, np.sin(half) / np.where(small, 1.0, angle))
    return np.concatenate([np.cos(half), scale * omega], axis=-1)


def random_unit_quat(rng, size=None) -> np.ndarray:
    """Uniform random rotation(s) as unit quaternions (normalized Gaussians)."""
    shape = (4,) if size is None else (size, 4)
    q = rng.normal(size=shape)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def rotation_angle(q) -> np.ndarray:
    """Rotation angle in [0, pi] of unit quaternion(s)."""
    q = require_unit(q)
    v = np.linalg.norm(q[..., 1:], axis=-1)
    return 2.0 * np.arctan2(v, np.abs(q[..., 0]))


def lerp(r0, r1, time: float) -> np.ndarray:
    """(1 - time) r0 + time r1 for time in [0, 1]."""
    if not 0.0 <= time <= 1.0:
        raise ValueError(f"interpolation time must be in [0, 1], got {time}")
    r0 = _as_vec3(r0)
    r1 = _as_vec3(r1)
    return (1.0 - time) * r0 + time * r1


def slerp(q0, q1, time: float) -> np.ndarray:
    """Spherical linear interpolation q0 (q0^-1 q1)^time along the shortest arc.

    Endpoint representations are sign-corrected (q1 -> -q1 when the dot
    product is negative) so antipodal inputs follow the same path. Falls
    back to normalized lerp when the endpoints are nearly parallel.
    """
    if not 0.0 <= time <= 1.0:
        raise ValueError(f"interpolation time must be in [0, 1], got {time}")
    q0 = require_unit(q0)
    q1 = require_unit(q1)
    if q0.shape != (4,) or q1.shape != (4,):
        raise ValueError("slerp expects single quaternions")
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-9:
        return quat_normalize((1.0 - time) * q0 + time * q1)
    rel = quat_mul(quat_conjugate(q0), q1)
    half = np.arctan2(np.linalg.norm(rel[1:]), rel[0])
    axis = rel[1:] / np.linalg.norm(rel[1:])
    powered = np.concatenate([[np.cos(time * half)], np.sin(time * half) * axis])
    return quat_mul(q0, powered)


@dataclass(frozen=True)
class RigidTransform:
    """Rigid-body transform: translation t (angstrom) and unit quaternion q."""

    t: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        t = _as_vec3(self.t).reshape(3).copy()
        q = require_unit(np.asarray(self.q, dtype=np.float64).reshape(4)).copy()
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        t.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", q)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.zeros(3), quat_identity())

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def apply(self, points) -> np.ndarray:
        """R x + t for one point or an (n, 3) array of points."""
        return _rotate(self.q, _as_vec3(points)) + self.t


def compose(T2: RigidTransform, T1: RigidTransform) -> RigidTransform:
    """T2 after T1: (t2 + R2 t1, q2 q1)."""
    return RigidTransform(T2.t + _rotate(T2.q, T1.t), quat_normalize(quat_mul(T2.q, T1.q)))


def inverse(T: RigidTransform) -> RigidTransform:
    """(-R^T t, q^-1)."""
    qinv = quat_normalize(quat_conjugate(T.q))
    return RigidTransform(-_rotate(qinv, T.t), qinv)


def interp_transform(T0: RigidTransform, T1: RigidTransform, time: float) -> RigidTransform:
    """Lerp the translations and slerp the rotations at the given time."""
    return RigidTransform(lerp(T0.t, T1.t, time), slerp(T0.q, T1.q, time))
