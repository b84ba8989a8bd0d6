"""Rigid-body transform primitives.

Rotations are unit quaternions in (w, x, y, z) order, canonicalized to w >= 0
so every rotation has exactly one representation.  A Pose is a rotation plus a
translation and composes left to right like homogeneous matrices:
``(a @ b).apply(p) == a.apply(b.apply(p))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

QUAT_NORM_TOL = 1e-9


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Unit-norm, w >= 0 canonical form.

    At w == 0 exactly, q and -q would both qualify; the first nonzero vector
    component is forced positive so every rotation has one representation.
    """
    q = np.asarray(q, dtype=np.float64)
    n = math.sqrt(float(q @ q))
    if n < 1e-12:
        raise ValueError("zero-norm quaternion")
    q = q / n
    if q[0] < 0.0:
        q = -q
    elif q[0] == 0.0:
        for v in q[1:]:
            if v != 0.0:
                if v < 0.0:
                    q = -q
                break
    return q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
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


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    # v' = v + 2 w (u x v) + 2 u x (u x v), u = vector part
    u = np.asarray(q[1:], dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    t = 2.0 * np.cross(u, v)
    return v + q[0] * t + np.cross(u, t)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = math.sqrt(float(axis @ axis))
    if n < 1e-12:
        raise ValueError("zero-norm rotation axis")
    half = 0.5 * float(angle)
    s = math.sin(half) / n
    return quat_normalize(np.array([math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s]))


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Axis * angle, with angle in [0, pi] for the canonical w >= 0 form."""
    q = quat_normalize(q)
    sin_half = math.sqrt(float(q[1:] @ q[1:]))
    if sin_half < 1e-12:
        return 2.0 * q[1:]  # small-angle: sin(x) ~ x
    angle = 2.0 * math.atan2(sin_half, q[0])
    return q[1:] * (angle / sin_half)


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    rv = np.asarray(rv, dtype=np.float64)
    angle = math.sqrt(float(rv @ rv))
    if angle < 1e-12:
        return quat_normalize(np.array([1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]]))
    return quat_from_axis_angle(rv, angle)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def quat_slerp(a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    """Shortest-arc spherical interpolation, alpha in [0, 1]."""
    a = quat_normalize(a)
    b = quat_normalize(b)
    dot = float(a @ b)
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-10:
        return quat_normalize(a + alpha * (b - a))
    theta = math.acos(min(dot, 1.0))
    s = math.sin(theta)
    return quat_normalize(
        a * (math.sin((1.0 - alpha) * theta) / s) + b * (math.sin(alpha * theta) / s)
    )


@dataclass(frozen=True, eq=False)
class Pose:
    """Rotation (unit quaternion, wxyz) + translation. Immutable value type."""

    t: np.ndarray
    q: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.t, dtype=np.float64).reshape(3)
        q = quat_normalize(np.array(self.q, dtype=np.float64).reshape(4))
        t.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_axis_angle(axis, angle: float, t=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(np.asarray(t, dtype=np.float64), quat_from_axis_angle(np.asarray(axis), angle))

    @staticmethod
    def from_rotvec(rv, t=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(np.asarray(t, dtype=np.float64), quat_from_rotvec(np.asarray(rv)))

    @staticmethod
    def from_matrix(T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        return Pose(T[:3, 3], quat_from_matrix(T[:3, :3]))

    def to_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = quat_to_matrix(self.q)
        T[:3, 3] = self.t
        return T

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.t + quat_rotate(self.q, other.t), quat_mul(self.q, other.q))

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        qi = quat_conjugate(self.q)
        return Pose(-quat_rotate(qi, self.t), qi)

    def apply(self, p) -> np.ndarray:
        """Map a point from this frame to the parent frame."""
        return self.t + quat_rotate(self.q, np.asarray(p, dtype=np.float64))

    def rotate(self, v) -> np.ndarray:
        """Rotate a free vector (no translation)."""
        return quat_rotate(self.q, np.asarray(v, dtype=np.float64))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def isclose(self, other: "Pose", pos_tol: float = 1e-9, rot_tol: float = 1e-9) -> bool:
        derr = self.t - other.t
        rv = quat_to_rotvec(quat_mul(other.q, quat_conjugate(self.q)))
        return math.sqrt(float(derr @ derr)) <= pos_tol and math.sqrt(float(rv @ rv)) <= rot_tol

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.t, other.t) and np.array_equal(self.q, other.q)

    def __repr__(self) -> str:
        t = ", ".join(f"{v:+.4f}" for v in self.t)
        q = ", ".join(f"{v:+.4f}" for v in self.q)
        return f"Pose(t=[{t}], q=[{q}])"


def pose_lerp(a: Pose, b: Pose, alpha: float) -> Pose:
    """Linear translation + slerp rotation; alpha outside [0,1] is clamped."""
    alpha = min(1.0, max(0.0, float(alpha)))
    return Pose(a.t + alpha * (b.t - a.t), quat_slerp(a.q, b.q, alpha))
