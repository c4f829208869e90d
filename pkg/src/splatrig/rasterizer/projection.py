"""Screen-space projection of 3D Gaussians (EWA-style splatting).

cov2d = J W Sigma W^T J^T + low_pass * I, with J the pinhole projection
Jacobian at the Gaussian mean and W the world-to-camera rotation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import sh as shlib
from ..gaussians import GaussianCloud, GaussianPrimitive, quats_to_matrices
from ..geometry import CameraIntrinsics, Pose
from .config import RenderConfig


@dataclass
class ScreenGaussian:
    mean2d: np.ndarray  # pixels
    cov2d: np.ndarray  # 2x2, pixels^2, after low-pass dilation
    conic: np.ndarray  # [a, b, c] of the inverse covariance
    depth: float  # camera-frame z
    color: np.ndarray  # rgb from SH toward the camera
    base_opacity: float
    radius: float  # 3-sigma screen extent


CULLED = None


@dataclass
class ProjectionState:
    """Batch screen-space quantities; intermediates kept for backward."""

    valid: np.ndarray  # N bool
    mean2d: np.ndarray  # N x 2
    depth: np.ndarray  # N
    conic: np.ndarray  # N x 3 (a, b, c)
    cov2d: np.ndarray  # N x 2 x 2
    color: np.ndarray  # N x 3
    bbox: np.ndarray  # N x 4 int (x0, x1, y0, y1), pixel-index support
    # backward intermediates
    p_cam: np.ndarray  # N x 3
    jac: np.ndarray  # N x 2 x 3
    cov_cam: np.ndarray  # N x 3 x 3
    rot_mats: np.ndarray  # N x 3 x 3
    view_dir: np.ndarray  # N x 3
    view_dist: np.ndarray  # N
    raw_color: np.ndarray  # N x 3, pre-clamp
    basis: np.ndarray  # N x K


def project_cloud(cloud: GaussianCloud, K: CameraIntrinsics, T: Pose,
                  cfg: RenderConfig) -> ProjectionState:
    n = len(cloud)
    rot_w2c = T.matrix.T
    p_cam = (cloud.means - T.translation) @ T.matrix
    z = p_cam[:, 2]
    valid = z > cfg.z_near
    zs = np.where(valid, z, 1.0)

    mean2d = np.stack(
        [K.fx * p_cam[:, 0] / zs + K.cx, K.fy * p_cam[:, 1] / zs + K.cy], axis=-1
    )

    # guard-band frustum cull: near-tangential Gaussians project far outside
    # the image with huge, unreliable EWA footprints
    mx = (cfg.guard_band - 1.0) * K.width
    my = (cfg.guard_band - 1.0) * K.height
    valid &= (mean2d[:, 0] > -mx) & (mean2d[:, 0] < K.width + mx)
    valid &= (mean2d[:, 1] > -my) & (mean2d[:, 1] < K.height + my)

    # world covariance via M = R diag(s)
    rot_mats = quats_to_matrices(cloud.rotations)
    m = rot_mats * cloud.scales[:, None, :]
    cov3d = m @ np.swapaxes(m, 1, 2)
    cov_cam = rot_w2c[None] @ cov3d @ rot_w2c.T[None]

    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = K.fx / zs
    jac[:, 0, 2] = -K.fx * p_cam[:, 0] / zs**2
    jac[:, 1, 1] = K.fy / zs
    jac[:, 1, 2] = -K.fy * p_cam[:, 1] / zs**2

    cov2d = jac @ cov_cam @ np.swapaxes(jac, 1, 2)
    cov2d[:, 0, 0] += cfg.low_pass
    cov2d[:, 1, 1] += cfg.low_pass

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    valid &= det > 0
    det_s = np.where(det > 0, det, 1.0)
    conic = np.stack([c / det_s, -b / det_s, a / det_s], axis=-1)

    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid**2 - det_s, 0.0))
    radius = 3.0 * np.sqrt(lam_max)

    x0 = np.clip(np.floor(mean2d[:, 0] - radius), 0, K.width).astype(np.int64)
    x1 = np.clip(np.ceil(mean2d[:, 0] + radius), 0, K.width).astype(np.int64)
    y0 = np.clip(np.floor(mean2d[:, 1] - radius), 0, K.height).astype(np.int64)
    y1 = np.clip(np.ceil(mean2d[:, 1] + radius), 0, K.height).astype(np.int64)
    valid &= (x1 > x0) & (y1 > y0)
    bbox = np.stack([x0, x1, y0, y1], axis=-1)

    offset = cloud.means - T.translation
    dist = np.linalg.norm(offset, axis=1)
    dist_s = np.where(dist > 1e-12, dist, 1.0)
    view_dir = offset / dist_s[:, None]
    color, raw_color, basis = shlib.eval_sh_with_grad(
        cloud.sh, view_dir, cloud.sh_degree
    )

    return ProjectionState(
        valid=valid, mean2d=mean2d, depth=z, conic=conic, cov2d=cov2d,
        color=color, bbox=bbox, p_cam=p_cam, jac=jac, cov_cam=cov_cam,
        rot_mats=rot_mats, view_dir=view_dir, view_dist=dist_s,
        raw_color=raw_color, basis=basis,
    )


def project_gaussian(p: GaussianPrimitive, K: CameraIntrinsics, T: Pose,
                     cfg: RenderConfig):
    """Project a single primitive; returns a ScreenGaussian or None if culled."""
    cloud = GaussianCloud(
        p.mean[None], p.rotation[None], p.scale[None],
        np.array([p.opacity]), p.sh[None], cfg.sh_degree,
    )
    st = project_cloud(cloud, K, T, cfg)
    if not st.valid[0]:
        return CULLED
    a, b, c = st.cov2d[0, 0, 0], st.cov2d[0, 0, 1], st.cov2d[0, 1, 1]
    mid = 0.5 * (a + c)
    radius = 3.0 * np.sqrt(mid + np.sqrt(max(mid**2 - (a * c - b * b), 0.0)))
    return ScreenGaussian(
        mean2d=st.mean2d[0], cov2d=st.cov2d[0], conic=st.conic[0],
        depth=float(st.depth[0]), color=st.color[0],
        base_opacity=float(cloud.opacities[0]), radius=float(radius),
    )
