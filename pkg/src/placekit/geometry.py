"""Pinhole cameras, rigid transforms, projection and back-projection.

Poses are stored camera-to-world: X_world = R @ X_cam + t. World-to-camera
is always derived via ``inverse``, never stored. Pixel origin is the
top-left corner, +u right, +v down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonPositiveDepth(ValueError):
    """Raised when projecting or back-projecting at depth <= 0."""


_MIN_DEPTH = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera parameters, no distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def scaled(self, factor: float) -> "Intrinsics":
        """Intrinsics of the image resampled by `factor` (<1 shrinks).

        Pixel centers map as u' = (u + 0.5) * factor - 0.5 so that rays
        through cell centers are preserved.
        """
        return Intrinsics(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=(self.cx + 0.5) * factor - 0.5,
            cy=(self.cy + 0.5) * factor - 0.5,
            width=int(np.ceil(self.width * factor)),
            height=int(np.ceil(self.height * factor)),
        )

    def to_list(self) -> list:
        return [self.fx, self.fy, self.cx, self.cy, self.width, self.height]

    @staticmethod
    def from_list(v) -> "Intrinsics":
        return Intrinsics(float(v[0]), float(v[1]), float(v[2]), float(v[3]), int(v[4]), int(v[5]))


def _quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("zero quaternion")
    return q / n


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix from unit quaternion (qx, qy, qz, qw)."""
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    """Unit quaternion (qx, qy, qz, qw) from a rotation matrix, qw >= 0."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    if q[3] < 0:
        q = -q
    return _quat_normalize(q)


def _quat_mul(a, b):
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


class Pose:
    """Rigid camera-to-world transform: quaternion rotation + translation."""

    __slots__ = ("q", "t")

    def __init__(self, rotation=(0.0, 0.0, 0.0, 1.0), translation=(0.0, 0.0, 0.0)):
        self.q = _quat_normalize(rotation)
        self.t = np.asarray(translation, dtype=np.float64).copy()
        if self.t.shape != (3,):
            raise ValueError("translation must be a 3-vector")

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_matrix(R, t) -> "Pose":
        return Pose(matrix_to_quat(R), t)

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def apply(self, p) -> np.ndarray:
        """Map point(s) through the transform; p is (3,) or (N, 3)."""
        p = np.asarray(p, dtype=np.float64)
        return p @ self.R.T + self.t

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self*other).apply(p) == self.apply(other.apply(p))."""
        return Pose(_quat_mul(self.q, other.q), self.R @ other.t + self.t)

    def inverse(self) -> "Pose":
        qi = np.array([-self.q[0], -self.q[1], -self.q[2], self.q[3]])
        return Pose(qi, -(quat_to_matrix(qi) @ self.t))

    def to_list(self) -> list:
        """[tx, ty, tz, qx, qy, qz, qw] serialization order."""
        return [*self.t.tolist(), *self.q.tolist()]

    @staticmethod
    def from_list(v) -> "Pose":
        return Pose(rotation=v[3:7], translation=v[0:3])

    def __repr__(self):
        return f"Pose(q={self.q.round(6).tolist()}, t={self.t.round(6).tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def inverse(a: Pose) -> Pose:
    return a.inverse()


def apply(a: Pose, p) -> np.ndarray:
    return a.apply(p)


def project(p, intr: Intrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame point(s) to pixel coordinates."""
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= _MIN_DEPTH):
        raise NonPositiveDepth(f"projection requires z > {_MIN_DEPTH}")
    u = intr.fx * p[..., 0] / z + intr.cx
    v = intr.fy * p[..., 1] / z + intr.cy
    return np.stack([u, v], axis=-1)


def backproject(uv, z, intr: Intrinsics) -> np.ndarray:
    """Camera-frame point(s) for pixel(s) uv at depth z."""
    uv = np.asarray(uv, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise NonPositiveDepth("back-projection requires z > 0")
    x = z * (uv[..., 0] - intr.cx) / intr.fx
    y = z * (uv[..., 1] - intr.cy) / intr.fy
    return np.stack([x, y, np.broadcast_to(z, x.shape)], axis=-1)


def rodrigues(w) -> np.ndarray:
    """Rotation matrix for rotation vector w (axis * angle)."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    K = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
    if theta < 1e-12:
        return np.eye(3) + K  # first-order; exact at w = 0
    K = K / theta
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * (K @ K)


def exp_update(g: Pose, xi) -> Pose:
    """Left-multiply g by exp of the twist xi = (vx, vy, vz, wx, wy, wz).

    Uses the SE(3) exponential with the proper V matrix for the
    translation part, so exp_update(identity, xi) is the true exponential.
    """
    xi = np.asarray(xi, dtype=np.float64)
    v, w = xi[:3], xi[3:]
    theta = np.linalg.norm(w)
    R = rodrigues(w)
    K = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
    if theta < 1e-8:
        V = np.eye(3) + 0.5 * K
    else:
        V = (
            np.eye(3)
            + (1 - np.cos(theta)) / theta**2 * K
            + (theta - np.sin(theta)) / theta**3 * (K @ K)
        )
    dq = matrix_to_quat(R)
    return Pose(_quat_mul(dq, g.q), R @ g.t + V @ v)


def look_at(eye, target, up=(0.0, -1.0, 0.0)) -> Pose:
    """Camera-to-world pose at `eye` with +z toward `target`.

    Default `up` is world -y, matching the +v-down pixel convention
    (camera +y points down in a level camera).
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    n = np.linalg.norm(right)
    if n < 1e-9:
        up = np.array([0.0, 0.0, 1.0]) if abs(fwd[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        right = np.cross(fwd, up)
        n = np.linalg.norm(right)
    right = right / n
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=1)  # columns: camera x, y, z in world
    return Pose.from_matrix(R, eye)
