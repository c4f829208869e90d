"""Analytic gradients of a rendered image w.r.t. Gaussian parameters.

The compositing kernel yields gradients w.r.t. screen-space quantities
(mean2d, conic, color, base opacity); this module chains them back through
projection, covariance construction, SH evaluation, and the parameter
activations.

Raw-parameter gradients are reported at the canonical pre-activation point
of the stored cloud: unit-norm raw quaternion, log-scale, logit-opacity.
``rechain_rotation`` maps the quaternion gradient to an arbitrary raw
quaternion (the normalization scales gradients by 1/|raw|).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import sh as shlib
from ..gaussians import S_MAX, S_MIN, GaussianCloud
from ..geometry import CameraIntrinsics, Pose
from . import backend as kb
from .config import RenderConfig
from .forward import RenderState, render_with_state


@dataclass
class GradientSet:
    d_mean: np.ndarray  # N x 3, world frame
    d_raw_rotation: np.ndarray  # N x 4, at unit-norm raw quaternion
    d_raw_scale: np.ndarray  # N x 3, at raw = log(scale)
    d_raw_opacity: np.ndarray  # N, at raw = logit(opacity)
    d_sh: np.ndarray  # N x 3 x (L+1)^2

    def as_flat_dict(self):
        return {
            "mean": self.d_mean,
            "raw_rotation": self.d_raw_rotation,
            "raw_scale": self.d_raw_scale,
            "raw_opacity": self.d_raw_opacity,
            "sh": self.d_sh,
        }


def _quat_mat_grad(q):
    """d(rotation matrix)/d(quaternion): (N, 4, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)
    dw = np.stack([
        np.stack([zero, -2 * z, 2 * y], -1),
        np.stack([2 * z, zero, -2 * x], -1),
        np.stack([-2 * y, 2 * x, zero], -1),
    ], -2)
    dx = np.stack([
        np.stack([zero, 2 * y, 2 * z], -1),
        np.stack([2 * y, -4 * x, -2 * w], -1),
        np.stack([2 * z, 2 * w, -4 * x], -1),
    ], -2)
    dy = np.stack([
        np.stack([-4 * y, 2 * x, 2 * w], -1),
        np.stack([2 * x, zero, 2 * z], -1),
        np.stack([-2 * w, 2 * z, -4 * y], -1),
    ], -2)
    dz = np.stack([
        np.stack([-4 * z, -2 * w, 2 * x], -1),
        np.stack([2 * w, -4 * z, 2 * y], -1),
        np.stack([2 * x, 2 * y, zero], -1),
    ], -2)
    return np.stack([dw, dx, dy, dz], 1)


def rechain_rotation(raw_rotation, d_raw_rotation_unit):
    """Gradient at an arbitrary raw quaternion given the unit-norm gradient."""
    norms = np.linalg.norm(raw_rotation, axis=-1, keepdims=True)
    return d_raw_rotation_unit / np.maximum(norms, 1e-12)


def backward(cloud: GaussianCloud, K: CameraIntrinsics, T: Pose,
             cfg: RenderConfig, dl_dimage: np.ndarray,
             state: RenderState | None = None) -> GradientSet:
    """Gradients of sum(dl_dimage * rendered color) w.r.t. all parameters.

    Culled primitives receive zero gradient. The forward state is recomputed
    when not supplied.
    """
    if state is None:
        _, state = render_with_state(cloud, K, T, cfg)
    proj = state.projection
    order = state.order
    n = len(cloud)
    k_sh = shlib.num_coeffs(cloud.sh_degree)
    dl_dimage = np.ascontiguousarray(dl_dimage, dtype=np.float64)

    mean2d = np.ascontiguousarray(proj.mean2d[order])
    conic = np.ascontiguousarray(proj.conic[order])
    color = np.ascontiguousarray(proj.color[order])
    opacity = np.ascontiguousarray(cloud.opacities[order])
    depth = np.ascontiguousarray(proj.depth[order])
    bbox = np.ascontiguousarray(proj.bbox[order])
    bg = np.asarray(cfg.background, dtype=np.float64)

    gs_mean2d, gs_conic, gs_color, gs_opacity = kb.backward(
        state.backend, mean2d, conic, color, opacity, depth, bbox,
        state.tile_offsets, state.tile_items, state.tile_rects,
        K.height, K.width, bg, cfg.alpha_min, cfg.transmittance_floor,
        dl_dimage, cfg.threads, cfg.deterministic,
    )

    # scatter back to original primitive order
    g_mean2d = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_color = np.zeros((n, 3))
    g_opac = np.zeros(n)
    g_mean2d[order] = gs_mean2d
    g_conic[order] = gs_conic
    g_color[order] = gs_color
    g_opac[order] = gs_opacity

    valid = proj.valid
    # conic -> cov2d: conic = inv(cov2d), dL/dA = -C G C with C = inv(A)
    cmat = np.zeros((n, 2, 2))
    cmat[:, 0, 0] = proj.conic[:, 0]
    cmat[:, 0, 1] = cmat[:, 1, 0] = proj.conic[:, 1]
    cmat[:, 1, 1] = proj.conic[:, 2]
    gfull = np.zeros((n, 2, 2))
    gfull[:, 0, 0] = g_conic[:, 0]
    gfull[:, 0, 1] = gfull[:, 1, 0] = 0.5 * g_conic[:, 1]
    gfull[:, 1, 1] = g_conic[:, 2]
    d_cov2d = -cmat @ gfull @ cmat

    jac = proj.jac
    d_cov_cam = np.swapaxes(jac, 1, 2) @ d_cov2d @ jac
    d_jac = 2.0 * d_cov2d @ jac @ proj.cov_cam

    rot_c2w = T.matrix
    d_cov3d = rot_c2w[None] @ d_cov_cam @ rot_c2w.T[None]

    # Sigma = M M^T with M = R diag(s)
    m_mat = proj.rot_mats * cloud.scales[:, None, :]
    d_m = 2.0 * d_cov3d @ m_mat
    d_scale = np.einsum("nik,nik->nk", d_m, proj.rot_mats)
    d_rotmat = d_m * cloud.scales[:, None, :]

    dmat_dq = _quat_mat_grad(cloud.rotations)
    g_quat = np.einsum("nik,nqik->nq", d_rotmat, dmat_dq)
    # through normalization at |raw| = 1: project out the radial component
    g_raw_rot = g_quat - cloud.rotations * np.sum(g_quat * cloud.rotations,
                                                  axis=-1, keepdims=True)

    inside = (cloud.scales > S_MIN * (1 + 1e-12)) & (cloud.scales < S_MAX * (1 - 1e-12))
    g_raw_scale = d_scale * cloud.scales * inside

    g_raw_opacity = g_opac * cloud.opacities * (1.0 - cloud.opacities)

    # camera-frame point gradient: projection of the mean ...
    fx, fy = K.fx, K.fy
    x, y, z = proj.p_cam[:, 0], proj.p_cam[:, 1], proj.p_cam[:, 2]
    zs = np.where(valid, z, 1.0)
    d_pcam = np.zeros((n, 3))
    d_pcam[:, 0] = g_mean2d[:, 0] * fx / zs
    d_pcam[:, 1] = g_mean2d[:, 1] * fy / zs
    d_pcam[:, 2] = (-g_mean2d[:, 0] * fx * x / zs**2
                    - g_mean2d[:, 1] * fy * y / zs**2)
    # ... plus the Jacobian's own dependence on the mean
    d_pcam[:, 0] += d_jac[:, 0, 2] * (-fx / zs**2)
    d_pcam[:, 1] += d_jac[:, 1, 2] * (-fy / zs**2)
    d_pcam[:, 2] += (d_jac[:, 0, 0] * (-fx / zs**2)
                     + d_jac[:, 1, 1] * (-fy / zs**2)
                     + d_jac[:, 0, 2] * (2 * fx * x / zs**3)
                     + d_jac[:, 1, 2] * (2 * fy * y / zs**3))

    d_mean = d_pcam @ rot_c2w.T

    # SH color: coefficients and the view-direction dependence on the mean
    active = ((proj.raw_color > 0.0) & (proj.raw_color < 1.0)).astype(np.float64)
    g_sh = (g_color * active)[:, :, None] * proj.basis[:, None, :]
    dir_grad = shlib.sh_dir_gradient(cloud.sh, proj.raw_color, cloud.sh_degree)
    dl_ddir = np.einsum("nc,ncd->nd", g_color, dir_grad)
    dirs = proj.view_dir
    proj_perp = dl_ddir - dirs * np.sum(dl_ddir * dirs, axis=-1, keepdims=True)
    d_mean += proj_perp / proj.view_dist[:, None]

    mask = valid.astype(np.float64)
    return GradientSet(
        d_mean=d_mean * mask[:, None],
        d_raw_rotation=g_raw_rot * mask[:, None],
        d_raw_scale=g_raw_scale * mask[:, None],
        d_raw_opacity=g_raw_opacity * mask,
        d_sh=(g_sh * mask[:, None, None]).reshape(n, 3, k_sh),
    )
