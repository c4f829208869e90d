"""Finite-difference verification of the rasterizer's analytic gradients.

Scenes are built from pre-activation parameters so the check covers the full
chain: activations, projection, compositing, and spherical-harmonics color.

The check runs with the alpha and transmittance cutoffs zeroed: those
thresholds make the rendered loss piecewise-smooth, and a central difference
straddling a cutover point measures the jump instead of the derivative.  With
both cutoffs at zero the single-tile objective is smooth everywhere the probe
lands, so finite differences are a valid oracle for the analytic backward.
"""

from __future__ import annotations

import numpy as np

from .gaussians import GaussianCloud, activate_rotation, activate_scale, sigmoid
from .geometry import CameraIntrinsics, Pose, ValidationError
from .rasterizer import RenderConfig, backward, render
from .rasterizer.backward import rechain_rotation
from .sh import num_coeffs

H_RAW = 1e-4  # central-difference step on raw parameters
H_MEAN = 1e-5  # step on world-space means
ABS_FLOOR = 1e-6  # below this magnitude compare absolutely

GROUPS = ("mean", "raw_rotation", "raw_scale", "raw_opacity", "sh")


def random_scene(rng, n_gauss, size, sh_degree=1):
    """Raw parameter arrays plus a camera for one single-tile test scene."""
    k = num_coeffs(sh_degree)
    raw = {
        "mean": np.column_stack([
            rng.uniform(-0.4, 0.4, n_gauss),
            rng.uniform(-0.4, 0.4, n_gauss),
            rng.uniform(2.0, 6.0, n_gauss),
        ]),
        "raw_rotation": rng.normal(0.0, 1.0, (n_gauss, 4)),
        "raw_scale": rng.uniform(np.log(0.05), np.log(0.4), (n_gauss, 3)),
        "raw_opacity": rng.uniform(-1.5, 1.5, n_gauss),
        "sh": rng.uniform(-0.5, 0.5, (n_gauss, 3, k)),
    }
    fx = size * rng.uniform(1.2, 2.2)
    intr = CameraIntrinsics(fx, fx, size / 2, size / 2, size, size)
    return raw, intr, Pose.identity()


def build_cloud(raw, sh_degree=1) -> GaussianCloud:
    return GaussianCloud(
        means=raw["mean"],
        rotations=activate_rotation(raw["raw_rotation"]),
        scales=activate_scale(raw["raw_scale"]),
        opacities=sigmoid(raw["raw_opacity"]),
        sh=raw["sh"],
        sh_degree=sh_degree,
    )


def _loss(raw, intr, pose, cfg, weight):
    img = render(build_cloud(raw, cfg.sh_degree), intr, pose, cfg)
    return float(np.sum(weight * img.color))


def analytic_gradients(raw, intr, pose, cfg, weight):
    cloud = build_cloud(raw, cfg.sh_degree)
    g = backward(cloud, intr, pose, cfg, weight)
    return {
        "mean": g.d_mean,
        "raw_rotation": rechain_rotation(raw["raw_rotation"], g.d_raw_rotation),
        "raw_scale": g.d_raw_scale,
        "raw_opacity": g.d_raw_opacity,
        "sh": g.d_sh,
    }


def numeric_gradients(raw, intr, pose, cfg, weight):
    out = {}
    for group in GROUPS:
        arr = raw[group]
        h = H_MEAN if group == "mean" else H_RAW
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = _loss(raw, intr, pose, cfg, weight)
            flat[i] = orig - h
            lo = _loss(raw, intr, pose, cfg, weight)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * h)
        out[group] = grad
    return out


def max_relative_error(analytic, numeric):
    a, f = analytic.ravel(), numeric.ravel()
    small = np.maximum(np.abs(a), np.abs(f)) < ABS_FLOOR
    err = np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), ABS_FLOOR)
    err[small] = np.abs(a - f)[small]
    return float(err.max()) if err.size else 0.0


def run_gradcheck(seed=0, trials=100, max_gaussians=20, size=8, threshold=1e-3,
                  backend="auto"):
    """Per-parameter-group max error over seeded random scenes.

    Returns (report dict group -> max error, passed flag).
    """
    if trials < 0 or size < 1 or max_gaussians < 1:
        raise ValidationError("trials/size/gaussians must be positive")
    rng = np.random.default_rng(seed)
    cfg = RenderConfig(backend=backend, alpha_min=0.0, transmittance_floor=0.0)
    worst = {g: 0.0 for g in GROUPS}
    for _ in range(trials):
        n = int(rng.integers(1, max_gaussians + 1))
        raw, intr, pose = random_scene(rng, n, size)
        weight = rng.uniform(-1.0, 1.0, (size, size, 3))
        ana = analytic_gradients(raw, intr, pose, cfg, weight)
        num = numeric_gradients(raw, intr, pose, cfg, weight)
        for g in GROUPS:
            worst[g] = max(worst[g], max_relative_error(ana[g], num[g]))
    passed = all(v < threshold for v in worst.values())
    return worst, passed


def report_text(worst, passed, threshold=1e-3):
    lines = [f"{g} {v:.6e}" for g, v in worst.items()]
    lines.append(f"threshold {threshold:g}")
    lines.append("PASS" if passed else "FAIL")
    return "\n".join(lines) + "\n"
