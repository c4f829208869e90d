"""Gaussian primitive representation, parameter activations, and depth lifting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sh as shlib
from .geometry import (
    CameraIntrinsics,
    Pose,
    ValidationError,
    quat_normalize,
    quat_to_matrix,
    unproject,
)

# Scale clamps in meters: the exp activation is unbounded otherwise.
S_MIN = 1e-4
S_MAX = 50.0

DEFAULT_SH_DEGREE = 1


def raw_channel_count(sh_degree: int = DEFAULT_SH_DEGREE) -> int:
    """4 rotation + 1 opacity + 3 scale + 3*(L+1)^2 SH channels."""
    return 8 + 3 * shlib.num_coeffs(sh_degree)


@dataclass
class RawParamMap:
    """Pre-activation per-pixel parameters, channel-last.

    Channel layout: [rotation wxyz (4), opacity (1), scale xyz (3),
    sh (3*(L+1)^2, channel-major: r bands, g bands, b bands)].
    """

    values: np.ndarray  # H x W x C
    sh_degree: int = DEFAULT_SH_DEGREE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = raw_channel_count(self.sh_degree)
        if self.values.ndim != 3 or self.values.shape[2] != expected:
            raise ValidationError(
                f"raw param map needs {expected} channels, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("raw param map contains non-finite values")

    @property
    def shape(self):
        return self.values.shape[:2]

    @property
    def raw_rotation(self):
        return self.values[..., 0:4]

    @property
    def raw_opacity(self):
        return self.values[..., 4]

    @property
    def raw_scale(self):
        return self.values[..., 5:8]

    @property
    def raw_sh(self):
        h, w = self.shape
        return self.values[..., 8:].reshape(h, w, 3, shlib.num_coeffs(self.sh_degree))

    @classmethod
    def zeros(cls, height, width, sh_degree: int = DEFAULT_SH_DEGREE) -> "RawParamMap":
        v = np.zeros((height, width, raw_channel_count(sh_degree)))
        v[..., 0] = 1.0  # identity quaternion
        return cls(v, sh_degree)


@dataclass(frozen=True)
class GaussianPrimitive:
    mean: np.ndarray  # world, meters
    rotation: np.ndarray  # unit quaternion wxyz
    scale: np.ndarray  # per-axis std-dev, meters
    opacity: float
    sh: np.ndarray  # 3 x (L+1)^2


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def activate_rotation(raw_rotation: np.ndarray) -> np.ndarray:
    """Normalize raw quaternions; near-zero inputs become the identity."""
    raw = np.asarray(raw_rotation, dtype=np.float64)
    norms = np.linalg.norm(raw, axis=-1, keepdims=True)
    degenerate = norms < 1e-12
    safe = np.where(degenerate, 1.0, norms)
    q = raw / safe
    identity = np.zeros_like(q)
    identity[..., 0] = 1.0
    return np.where(degenerate, identity, q)


def activate_scale(raw_scale: np.ndarray) -> np.ndarray:
    clamped = np.clip(np.asarray(raw_scale, dtype=np.float64), np.log(S_MIN), np.log(S_MAX))
    return np.exp(clamped)


def activate(raw: RawParamMap):
    """Apply all activations; returns (rotation, opacity, scale, sh) maps."""
    return (
        activate_rotation(raw.raw_rotation),
        sigmoid(raw.raw_opacity),
        activate_scale(raw.raw_scale),
        raw.raw_sh.copy(),
    )


def covariance(rotation, scale) -> np.ndarray:
    """Sigma = R diag(scale)^2 R^T for one or many primitives."""
    rotation = np.asarray(rotation, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if rotation.ndim == 1:
        m = quat_to_matrix(rotation) * scale[None, :]
        return m @ m.T
    mats = quats_to_matrices(rotation)
    m = mats * scale[:, None, :]
    return m @ np.swapaxes(m, 1, 2)


def quats_to_matrices(q: np.ndarray) -> np.ndarray:
    """Vectorized quaternion (N,4) to rotation matrices (N,3,3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


@dataclass
class GaussianCloud:
    """Structure-of-arrays Gaussian collection, row-major by (camera, row, col)."""

    means: np.ndarray  # N x 3
    rotations: np.ndarray  # N x 4, unit wxyz
    scales: np.ndarray  # N x 3
    opacities: np.ndarray  # N
    sh: np.ndarray  # N x 3 x (L+1)^2
    sh_degree: int = DEFAULT_SH_DEGREE
    source_camera: np.ndarray | None = None  # N, int camera index
    source_pixel: np.ndarray | None = None  # N x 2, (row, col)

    def __post_init__(self):
        self.means = np.ascontiguousarray(self.means, dtype=np.float64)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float64)
        self.opacities = np.ascontiguousarray(self.opacities, dtype=np.float64)
        self.sh = np.ascontiguousarray(self.sh, dtype=np.float64)

    def __len__(self):
        return self.means.shape[0]

    def __getitem__(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            self.means[i], self.rotations[i], self.scales[i],
            float(self.opacities[i]), self.sh[i],
        )

    @classmethod
    def empty(cls, sh_degree: int = DEFAULT_SH_DEGREE) -> "GaussianCloud":
        k = shlib.num_coeffs(sh_degree)
        return cls(
            np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)),
            np.zeros(0), np.zeros((0, 3, k)), sh_degree,
        )

    @classmethod
    def concatenate(cls, clouds) -> "GaussianCloud":
        clouds = list(clouds)
        if not clouds:
            raise ValidationError("cannot concatenate zero clouds")
        deg = clouds[0].sh_degree
        if any(c.sh_degree != deg for c in clouds):
            raise ValidationError("mixed SH degrees")
        cams = None
        pix = None
        if all(c.source_camera is not None for c in clouds):
            cams = np.concatenate([c.source_camera for c in clouds])
            pix = np.concatenate([c.source_pixel for c in clouds])
        return cls(
            np.concatenate([c.means for c in clouds]),
            np.concatenate([c.rotations for c in clouds]),
            np.concatenate([c.scales for c in clouds]),
            np.concatenate([c.opacities for c in clouds]),
            np.concatenate([c.sh for c in clouds]),
            deg, cams, pix,
        )

    def validate(self):
        if not np.all(np.isfinite(self.means)):
            raise ValidationError("non-finite means")
        if np.any(np.abs(np.linalg.norm(self.rotations, axis=1) - 1) > 1e-9):
            raise ValidationError("rotations not unit quaternions")
        if np.any(self.scales < S_MIN * (1 - 1e-9)) or np.any(self.scales > S_MAX * (1 + 1e-9)):
            raise ValidationError("scales outside [s_min, s_max]")
        if np.any(self.opacities <= 0) or np.any(self.opacities >= 1):
            raise ValidationError("opacities must lie strictly in (0, 1)")


def pixel_centers(height: int, width: int) -> np.ndarray:
    """(H*W, 2) continuous pixel coordinates, row-major."""
    jj, ii = np.meshgrid(np.arange(width), np.arange(height))
    return np.stack([jj.ravel() + 0.5, ii.ravel() + 0.5], axis=-1).astype(np.float64)


def lift(depth, raw: RawParamMap, K: CameraIntrinsics, T: Pose,
         camera_index: int = 0) -> GaussianCloud:
    """One Gaussian per pixel: mean from unprojected depth, attributes from
    activated raw parameters. Output is row-major by (row, col)."""
    depth = np.asarray(depth, dtype=np.float64)
    h, w = raw.shape
    if depth.shape != (h, w):
        raise ValidationError(f"depth {depth.shape} does not match raw map {(h, w)}")
    if np.any(depth <= 0) or not np.all(np.isfinite(depth)):
        raise ValidationError("depth must be positive and finite")

    means = unproject(pixel_centers(h, w), depth.ravel(), K, T)
    rot, opac, scale, sh = activate(raw)
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    return GaussianCloud(
        means=means,
        rotations=rot.reshape(-1, 4),
        scales=scale.reshape(-1, 3),
        opacities=opac.ravel(),
        sh=sh.reshape(-1, 3, shlib.num_coeffs(raw.sh_degree)),
        sh_degree=raw.sh_degree,
        source_camera=np.full(h * w, camera_index, dtype=np.int64),
        source_pixel=np.stack([ii.ravel(), jj.ravel()], axis=-1).astype(np.int64),
    )
