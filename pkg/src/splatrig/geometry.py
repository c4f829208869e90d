"""Pinhole cameras, rigid poses, and depth/disparity conversions.

Conventions (recorded in every file format that stores them):
  * poses are camera-to-world, quaternions stored wxyz
  * camera frame: x right, y down, z forward
  * pixel (row i, col j) is sampled at continuous coordinates (j + 0.5, i + 0.5)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Disparity floor applied before the f*B/dis division.
EPS_DISPARITY = 1e-6

# Default culling planes (meters).
Z_NEAR = 0.05
Z_FAR = 500.0


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if not (0 < self.cx < self.width) or not (0 < self.cy < self.height):
            raise ValidationError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    return q / n


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix from a unit quaternion (wxyz)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> np.ndarray:
    """Unit quaternion (wxyz) from a rotation matrix, w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform: p_world = R @ p_cam + t."""

    rotation: np.ndarray  # unit quaternion, wxyz
    translation: np.ndarray  # meters

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            q = quat_normalize(q)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, rot: np.ndarray, t) -> "Pose":
        return cls(matrix_to_quat(rot), np.asarray(t, dtype=np.float64))

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map camera-frame point(s) to the world frame."""
        return np.asarray(points) @ self.matrix.T + self.translation


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying b first, then a."""
    ra, rb = a.matrix, b.matrix
    return Pose.from_matrix(ra @ rb, ra @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    r = p.matrix.T
    return Pose.from_matrix(r, -r @ p.translation)


@dataclass(frozen=True)
class CameraModel:
    intrinsics: CameraIntrinsics
    pose: Pose
    camera_id: str = "cam"

    @property
    def world_to_cam(self) -> Pose:
        return invert(self.pose)

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation


def _check_positive_finite(values, name):
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} contains non-finite values")
    return v


def disparity_to_depth(dis, f: float, baseline: float = 1.0) -> np.ndarray:
    """Metric depth from disparity: depth = f * B / disparity.

    Disparity below EPS_DISPARITY is clamped (no failure); NaN is rejected.
    """
    dis = _check_positive_finite(dis, "disparity")
    if f <= 0 or baseline <= 0:
        raise ValidationError("focal length and baseline must be positive")
    return f * baseline / np.maximum(dis, EPS_DISPARITY)


def depth_to_disparity(depth, f: float, baseline: float = 1.0) -> np.ndarray:
    depth = _check_positive_finite(depth, "depth")
    if np.any(depth <= 0):
        raise ValidationError("depth must be positive")
    return f * baseline / depth


def unproject(pixel, depth, K: CameraIntrinsics, T: Pose) -> np.ndarray:
    """Lift pixel coordinates at given depth to world points.

    Accepts a single (u, v) pair or an (N, 2) array with matching depths.
    """
    pixel = np.asarray(pixel, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValidationError("depth must be positive")
    u, v = pixel[..., 0], pixel[..., 1]
    pc = np.stack(
        [(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth], axis=-1
    )
    return T.apply(pc)


def project(point, K: CameraIntrinsics, T: Pose, z_near: float = Z_NEAR):
    """Pinhole-project world point(s); returns (pixels, depths, valid mask).

    Points with camera-frame z <= z_near are flagged invalid (culled), not
    an error.
    """
    point = np.asarray(point, dtype=np.float64)
    pc = (point - T.translation) @ T.matrix
    z = pc[..., 2]
    valid = z > z_near
    zs = np.where(valid, z, 1.0)
    pix = np.stack(
        [K.fx * pc[..., 0] / zs + K.cx, K.fy * pc[..., 1] / zs + K.cy], axis=-1
    )
    return pix, z, valid
