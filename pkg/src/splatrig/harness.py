"""Synthetic surround rig, scene generation, teacher depth oracle, direct
Gaussian-parameter fitting, and metric evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import losses as L
from .gaussians import (
    GaussianCloud,
    RawParamMap,
    S_MAX,
    S_MIN,
    lift,
    raw_channel_count,
)
from .geometry import (
    CameraIntrinsics,
    CameraModel,
    Pose,
    ValidationError,
    depth_to_disparity,
)
from .rasterizer import RenderConfig, backward, render, render_with_state
from .rasterizer.backward import rechain_rotation
from .sh import C0, num_coeffs


class DivergenceError(RuntimeError):
    """Fit loss became non-finite; carries the trace collected so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


# ----------------------------------------------------------------------- rig

@dataclass
class RigSpec:
    cameras: int = 6
    yaw_spacing_deg: float = 60.0
    hfov_deg: float = 66.0  # ~10% pairwise overlap at 60 deg spacing
    width: int = 64
    height: int = 64
    radius_m: float = 0.5

    def __post_init__(self):
        if self.cameras < 1:
            raise ValidationError("need at least one camera")
        if not (0 < self.hfov_deg < 180):
            raise ValidationError("horizontal FOV must lie in (0, 180)")


def rig_overlap_fraction(spec: RigSpec) -> float:
    """Angular overlap of adjacent frusta as a fraction of one camera's FOV."""
    overlap = max(0.0, spec.hfov_deg - spec.yaw_spacing_deg)
    return min(overlap, spec.hfov_deg) / spec.hfov_deg


def make_rig(spec: RigSpec):
    """Outward-facing cameras on a circle; world frame y points down."""
    fx = (spec.width / 2) / math.tan(math.radians(spec.hfov_deg) / 2)
    intr = CameraIntrinsics(fx, fx, spec.width / 2, spec.height / 2,
                            spec.width, spec.height)
    cams = []
    for i in range(spec.cameras):
        yaw = math.radians(i * spec.yaw_spacing_deg)
        s, c = math.sin(yaw), math.cos(yaw)
        rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        t = spec.radius_m * np.array([s, 0.0, c])
        cams.append(CameraModel(intr, Pose.from_matrix(rot, t), camera_id=f"cam{i}"))
    return cams


def translate_rig(cameras, offset):
    offset = np.asarray(offset, dtype=np.float64)
    return [
        CameraModel(cam.intrinsics, Pose(cam.pose.rotation, cam.pose.translation + offset),
                    camera_id=cam.camera_id)
        for cam in cameras
    ]


# --------------------------------------------------------------------- scene

@dataclass
class SceneSpec:
    seed: int = 0
    count: int = 300
    layout: str = "box"  # box | corridor
    distance_range: tuple = (3.0, 12.0)
    height_range: tuple = (-3.0, 3.0)
    color_range: tuple = (0.15, 0.85)
    scale_range: tuple = (0.08, 0.45)
    opacity_range: tuple = (0.3, 0.95)
    sh_degree: int = 1

    def __post_init__(self):
        if self.count < 1:
            raise ValidationError("scene needs at least one Gaussian")
        if self.layout not in ("box", "corridor"):
            raise ValidationError(f"unknown layout {self.layout!r}")
        lo, hi = self.scale_range
        if lo < S_MIN or hi > S_MAX:
            raise ValidationError("scale range outside primitive bounds")
        lo, hi = self.opacity_range
        if lo <= 0 or hi >= 1:
            raise ValidationError("opacity range must lie strictly in (0, 1)")


def make_scene(spec: SceneSpec) -> GaussianCloud:
    rng = np.random.default_rng(spec.seed)
    n = spec.count
    if spec.layout == "box":
        ang = rng.uniform(0, 2 * math.pi, n)
        rad = rng.uniform(*spec.distance_range, n)
        x = rad * np.sin(ang)
        z = rad * np.cos(ang)
    else:  # corridor: walls along the driving axis
        side = rng.choice([-1.0, 1.0], n)
        x = side * rng.uniform(*spec.distance_range, n)
        z = rng.uniform(-4 * spec.distance_range[1], 4 * spec.distance_range[1], n)
    y = rng.uniform(*spec.height_range, n)
    means = np.column_stack([x, y, z])

    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    scales = rng.uniform(*spec.scale_range, (n, 3))
    opac = rng.uniform(*spec.opacity_range, n)

    k = num_coeffs(spec.sh_degree)
    sh = np.zeros((n, 3, k))
    base = rng.uniform(*spec.color_range, (n, 3))
    sh[:, :, 0] = (base - 0.5) / C0
    if k > 1:
        sh[:, :, 1:] = rng.uniform(-0.1, 0.1, (n, 3, k - 1))
    cloud = GaussianCloud(means, q, scales, opac, sh, spec.sh_degree)
    cloud.validate()
    return cloud


# ------------------------------------------------------------------- teacher

def teacher_depth(cloud: GaussianCloud, camera: CameraModel, noise_std: float = 0.0,
                  seed: int = 0, cfg: RenderConfig = None) -> np.ndarray:
    """Expected-depth channel of the rasterizer, optionally perturbed by
    seeded multiplicative log-normal noise; floored at z_near."""
    cfg = cfg or RenderConfig()
    img = render(cloud, camera.intrinsics, camera.pose, cfg)
    depth = img.depth
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        depth = depth * np.exp(rng.normal(0.0, noise_std, depth.shape))
    return np.maximum(depth, cfg.z_near)


# ------------------------------------------------------------------- fitting

FREE_GROUPS = ("rotation", "opacity", "scale", "sh", "depth")


@dataclass
class FitConfig:
    iterations: int = 500
    step_size: float = 1e-2
    step_decay: float = 1.0  # multiplicative per-iteration decay
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    free: tuple = ("rotation", "opacity", "scale", "sh")
    monotone_guard: bool = True  # shrink the step when a step raises the loss
    baseline: float = 1.0  # disparity baseline scale for the smoothness term

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if self.step_size < 0:
            raise ValidationError("step size must be non-negative")
        for g in self.free:
            if g not in FREE_GROUPS:
                raise ValidationError(f"unknown parameter group {g!r}")


@dataclass
class FitResult:
    raw_maps: list  # per input camera, H x W x C arrays
    depths: list  # per input camera
    trace: list  # one dict per iteration
    metrics: list  # evaluate() rows on the target views
    optimizer_state: dict


def default_init(input_views, teacher_depths, sh_degree=1):
    """Neutral initialization: gray color, identity rotation, half opacity,
    roughly pixel-sized scales derived from the teacher depth."""
    raws, depths = [], []
    for (image, cam), depth in zip(input_views, teacher_depths):
        h, w, _ = image.shape
        raw = np.zeros((h, w, raw_channel_count(sh_degree)))
        raw[..., 0] = 1.0  # identity quaternion
        footprint = 0.7 * depth / cam.intrinsics.fx
        raw[..., 5:8] = np.clip(np.log(footprint), np.log(S_MIN * 2),
                                np.log(S_MAX / 2))[..., None]
        raws.append(raw)
        depths.append(np.asarray(depth, dtype=np.float64).copy())
    return raws, depths


def _raw_views(raw):
    """(rotation, opacity, scale, sh) slices of one raw map array."""
    return raw[..., 0:4], raw[..., 4], raw[..., 5:8], raw[..., 8:]


def _fit_loss_and_grads(raw_maps, depths, input_views, target_views,
                        teacher_depths, weights, fit_cfg, render_cfg, sh_degree):
    """Total loss (Eq.-14-style combination) and gradients w.r.t. raw maps
    and log-depths."""
    n_in = len(input_views)
    hw = [iv[0].shape[:2] for iv in input_views]
    clouds = []
    for i, (image, cam) in enumerate(input_views):
        clouds.append(lift(depths[i], RawParamMap(raw_maps[i], sh_degree),
                           cam.intrinsics, cam.pose, camera_index=i))
    cloud = GaussianCloud.concatenate(clouds)

    g_raw = [np.zeros_like(r) for r in raw_maps]
    g_logdepth = [np.zeros_like(d) for d in depths]

    # render loss over target views
    m = len(target_views)
    render_total = 0.0
    for image, cam in target_views:
        img, state = render_with_state(cloud, cam.intrinsics, cam.pose, render_cfg)
        report, dl_dimage = L.render_loss_grad(img.color, image, weights)
        render_total += report.total / m
        grads = backward(cloud, cam.intrinsics, cam.pose, render_cfg,
                         dl_dimage / m, state=state)
        offset = 0
        for i in range(n_in):
            h, w = hw[i]
            size = h * w
            sl = slice(offset, offset + size)
            raw_rot = raw_maps[i][..., 0:4].reshape(size, 4)
            g_rot = rechain_rotation(raw_rot, grads.d_raw_rotation[sl])
            g_raw[i][..., 0:4] += g_rot.reshape(h, w, 4)
            g_raw[i][..., 4] += grads.d_raw_opacity[sl].reshape(h, w)
            g_raw[i][..., 5:8] += grads.d_raw_scale[sl].reshape(h, w, 3)
            g_raw[i][..., 8:] += grads.d_sh[sl].reshape(h, w, -1)
            if "depth" in fit_cfg.free:
                cam_i = input_views[i][1]
                jj, ii = np.meshgrid(np.arange(w), np.arange(h))
                dirs = np.stack([
                    (jj + 0.5 - cam_i.intrinsics.cx) / cam_i.intrinsics.fx,
                    (ii + 0.5 - cam_i.intrinsics.cy) / cam_i.intrinsics.fy,
                    np.ones((h, w)),
                ], axis=-1)
                dmean_dd = dirs @ cam_i.pose.matrix.T
                dl_dd = np.einsum("hwk,hwk->hw",
                                  grads.d_mean[sl].reshape(h, w, 3), dmean_dd)
                g_logdepth[i] += dl_dd * depths[i]
            offset += size

    # render-path gradients carry the outer lambda_render
    for i in range(n_in):
        g_raw[i] *= weights.lambda_render
        g_logdepth[i] *= weights.lambda_render

    # distillation: smooth L1 + affine-invariant terms on the depth maps
    distill_total = 0.0
    for i in range(n_in):
        s_val, s_grad = L.smooth_l1_grad(depths[i], teacher_depths[i])
        a_val, a_grad = L.affine_invariant_grad(depths[i], teacher_depths[i])
        distill_total += (s_val + a_val) / n_in
        if "depth" in fit_cfg.free:
            g_logdepth[i] += weights.lambda_distill / n_in * (s_grad + a_grad) * depths[i]

    # localization: edge-aware smoothness of the input disparities
    loc_total = 0.0
    for i, (image, cam) in enumerate(input_views):
        disp = depth_to_disparity(depths[i], cam.intrinsics.fx, fit_cfg.baseline)
        val, grad_disp = L.edge_aware_smoothness_grad(disp, image)
        loc_total += weights.lambda_smooth * val / n_in
        if "depth" in fit_cfg.free:
            # d disp / d log depth = -disp
            g_logdepth[i] += weights.lambda_loc * weights.lambda_smooth / n_in \
                * grad_disp * (-disp)

    report = L.total_loss(
        L.LossReport({}, {}, render_total), distill_total, loc_total, weights
    )
    return report, g_raw, g_logdepth


def _mask_grads(g_raw, g_logdepth, free):
    for g in g_raw:
        if "rotation" not in free:
            g[..., 0:4] = 0
        if "opacity" not in free:
            g[..., 4] = 0
        if "scale" not in free:
            g[..., 5:8] = 0
        if "sh" not in free:
            g[..., 8:] = 0
    if "depth" not in free:
        for g in g_logdepth:
            g[:] = 0
    return g_raw, g_logdepth


def _flatten(arrays):
    return np.concatenate([a.ravel() for a in arrays])


def _unflatten(vec, templates):
    out, pos = [], 0
    for t in templates:
        out.append(vec[pos:pos + t.size].reshape(t.shape))
        pos += t.size
    return out


def fit_scene(input_views, target_views, init, fit_cfg: FitConfig,
              weights: L.LossWeights, render_cfg: RenderConfig = None,
              teacher_depths=None, sh_degree=1, optimizer_state=None,
              start_iteration=0, on_iteration=None) -> FitResult:
    """First-order fit of per-pixel raw Gaussian parameters (and optionally
    log-depth) against rendered target views.

    Returns the fitted parameters, the per-iteration loss trace, and
    PSNR/SSIM metrics on the target (held-out) views.
    """
    if not input_views or not target_views:
        raise ValidationError("need at least one input and one target view")
    render_cfg = render_cfg or RenderConfig()
    raw_maps = [np.asarray(r, dtype=np.float64).copy() for r in init[0]]
    depths = [np.asarray(d, dtype=np.float64).copy() for d in init[1]]
    if teacher_depths is None:
        teacher_depths = [d.copy() for d in depths]

    n_params = sum(r.size for r in raw_maps) + sum(d.size for d in depths)
    if optimizer_state:
        m_vec = optimizer_state["m"].copy()
        v_vec = optimizer_state["v"].copy()
        step = float(optimizer_state["step_size"])
        adam_t = int(optimizer_state["t"])
    else:
        m_vec = np.zeros(n_params)
        v_vec = np.zeros(n_params)
        step = fit_cfg.step_size
        adam_t = 0

    def evaluate_point(raws, deps):
        return _fit_loss_and_grads(raws, deps, input_views, target_views,
                                   teacher_depths, weights, fit_cfg,
                                   render_cfg, sh_degree)

    trace = []
    report, g_raw, g_logdepth = evaluate_point(raw_maps, depths)
    g_raw, g_logdepth = _mask_grads(g_raw, g_logdepth, fit_cfg.free)
    for it in range(start_iteration, start_iteration + fit_cfg.iterations):
        if not np.isfinite(report.total):
            raise DivergenceError(f"loss diverged at iteration {it}", trace)
        rec = {"iteration": it, "total": report.total,
               "render": report.components["render"],
               "distill": report.components["distill"],
               "loc": report.components["loc"], "step_size": step}
        trace.append(rec)
        if on_iteration:
            on_iteration(rec)

        grad = np.concatenate([_flatten(g_raw), _flatten(g_logdepth)])
        params = np.concatenate(
            [_flatten(raw_maps), _flatten([np.log(d) for d in depths])]
        )

        m_base, v_base = m_vec.copy(), v_vec.copy()
        while True:
            m_vec = fit_cfg.beta1 * m_base + (1 - fit_cfg.beta1) * grad
            v_vec = fit_cfg.beta2 * v_base + (1 - fit_cfg.beta2) * grad * grad
            t1 = adam_t + 1
            m_hat = m_vec / (1 - fit_cfg.beta1**t1)
            v_hat = v_vec / (1 - fit_cfg.beta2**t1)
            if step == 0:
                adam_t = t1
                break
            cand = params - step * m_hat / (np.sqrt(v_hat) + fit_cfg.eps)
            k = sum(r.size for r in raw_maps)
            cand_raw = _unflatten(cand[:k], raw_maps)
            cand_depth = [np.exp(a) for a in _unflatten(cand[k:], depths)]
            cand_report, cand_graw, cand_glog = evaluate_point(cand_raw, cand_depth)
            improved = cand_report.total <= report.total
            if (not fit_cfg.monotone_guard) or improved:
                raw_maps, depths = cand_raw, cand_depth
                report = cand_report
                g_raw, g_logdepth = _mask_grads(cand_graw, cand_glog, fit_cfg.free)
                adam_t = t1
                break
            if step < 1e-12:  # flat region: keep current point, record same loss
                adam_t = t1
                break
            step *= 0.5
        step *= fit_cfg.step_decay

    metrics = evaluate(
        [render(GaussianCloud.concatenate([
            lift(depths[i], RawParamMap(raw_maps[i], sh_degree),
                 input_views[i][1].intrinsics, input_views[i][1].pose, i)
            for i in range(len(input_views))
        ]), cam.intrinsics, cam.pose, render_cfg).color for _, cam in target_views],
        [img for img, _ in target_views],
        names=[cam.camera_id for _, cam in target_views],
    )
    opt_state = {"m": m_vec, "v": v_vec,
                 "step_size": np.array(step), "t": np.array(adam_t)}
    return FitResult(raw_maps, depths, trace, metrics, opt_state)


# ------------------------------------------------------------------ evaluation

def evaluate(pred_views, gt_views, perceptual=None, names=None):
    """Per-view and mean PSNR/SSIM rows; LPIPS only via callback."""
    if len(pred_views) != len(gt_views):
        raise ValidationError("prediction and ground-truth view counts differ")
    rows = []
    for i, (pred, gt) in enumerate(zip(pred_views, gt_views)):
        row = {
            "view": names[i] if names else f"view{i}",
            "psnr": L.psnr(pred, gt),
            "ssim": L.ssim(pred, gt),
        }
        if perceptual is not None:
            row["lpips"] = float(perceptual(pred, gt))
        rows.append(row)
    mean_row = {"view": "mean"}
    for key in rows[0]:
        if key != "view":
            mean_row[key] = float(np.mean([r[key] for r in rows]))
    rows.append(mean_row)
    return rows
