"""Image and depth losses with analytic gradients, plus PSNR/SSIM metrics.

Each `*_grad` companion returns (value, d value / d first argument) so the
fitting loop can assemble end-to-end gradients without autodiff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .geometry import ValidationError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PSNR_CAP_DB = 100.0
DEPTH_FLOOR = 1e-6


@dataclass
class LossWeights:
    # render loss (L1 / SSIM / perceptual)
    lambda_l1: float = 0.8
    lambda_ssim: float = 0.2
    lambda_perceptual: float = 0.0
    # total loss combination
    lambda_render: float = 0.01
    lambda_distill: float = 0.0005
    lambda_loc: float = 1.0
    # localization loss slots
    lambda_sp: float = 1.0
    lambda_sp_tm: float = 1.0
    lambda_smooth: float = 0.001
    photometric_alpha: float = 0.85

    def __post_init__(self):
        vals = [self.lambda_l1, self.lambda_ssim, self.lambda_perceptual,
                self.lambda_render, self.lambda_distill, self.lambda_loc,
                self.lambda_sp, self.lambda_sp_tm, self.lambda_smooth]
        if any(v < 0 for v in vals):
            raise ValidationError("loss weights must be non-negative")
        if not (0 <= self.photometric_alpha <= 1):
            raise ValidationError("photometric_alpha must lie in [0, 1]")


@dataclass
class LossReport:
    components: dict
    weights: dict
    total: float
    perceptual_absent: bool = False

    def to_text(self) -> str:
        lines = [f"{k} {v:.17g}" for k, v in self.components.items()]
        lines.append(f"total {self.total:.17g}")
        if self.perceptual_absent:
            lines.append("perceptual absent")
        return "\n".join(lines) + "\n"


def _check_same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def l1_loss(a, b) -> float:
    a, b = _check_same_shape(a, b)
    return float(np.mean(np.abs(a - b)))


def l1_loss_grad(a, b):
    a, b = _check_same_shape(a, b)
    return float(np.mean(np.abs(a - b))), np.sign(a - b) / a.size


def _ssim_window():
    half = SSIM_WINDOW // 2
    g = np.exp(-0.5 * (np.arange(-half, half + 1) / SSIM_SIGMA) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def _channels(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[..., None]
    return img


def _ssim_maps(x, y, w):
    """Per-window SSIM map and the intermediates needed for the gradient."""
    m1 = convolve2d(x, w, mode="valid")
    m2 = convolve2d(y, w, mode="valid")
    p = convolve2d(x * x, w, mode="valid")
    q = convolve2d(y * y, w, mode="valid")
    r = convolve2d(x * y, w, mode="valid")
    a1 = 2 * m1 * m2 + SSIM_C1
    a2 = 2 * (r - m1 * m2) + SSIM_C2
    b1 = m1 * m1 + m2 * m2 + SSIM_C1
    b2 = (p - m1 * m1) + (q - m2 * m2) + SSIM_C2
    return a1 * a2 / (b1 * b2), (m1, m2, a1, a2, b1, b2)


def ssim(a, b) -> float:
    """Windowed SSIM (11x11 Gaussian, sigma 1.5) for unit dynamic range."""
    a, b = _check_same_shape(a, b)
    a, b = _channels(a), _channels(b)
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValidationError("image smaller than the SSIM window")
    w = _ssim_window()
    vals = [
        np.mean(_ssim_maps(a[..., c], b[..., c], w)[0]) for c in range(a.shape[2])
    ]
    return float(np.mean(vals))


def ssim_grad(a, b):
    """(ssim value, d ssim / d a)."""
    a, b = _check_same_shape(a, b)
    squeeze = np.asarray(a).ndim == 2
    a3, b3 = _channels(a), _channels(b)
    if a3.shape[0] < SSIM_WINDOW or a3.shape[1] < SSIM_WINDOW:
        raise ValidationError("image smaller than the SSIM window")
    w = _ssim_window()
    grad = np.zeros_like(a3)
    vals = []
    nc = a3.shape[2]
    for c in range(nc):
        x, y = a3[..., c], b3[..., c]
        s, (m1, m2, a1, a2, b1, b2) = _ssim_maps(x, y, w)
        vals.append(np.mean(s))
        n = s.size * nc
        bb = b1 * b2
        ds_dm1 = 2 * m2 * (a2 - a1) / bb - 2 * m1 * a1 * a2 * (b2 - b1) / bb**2
        ds_dp = -a1 * a2 / (b1 * b2**2)
        ds_dr = 2 * a1 / bb
        grad[..., c] = (
            convolve2d(ds_dm1, w, mode="full")
            + convolve2d(ds_dp, w, mode="full") * 2 * x
            + convolve2d(ds_dr, w, mode="full") * y
        ) / n
    g = grad[..., 0] if squeeze else grad
    return float(np.mean(vals)), g


def ssim_loss(a, b) -> float:
    return 1.0 - ssim(a, b)


def smooth_l1(pred, target) -> float:
    pred, target = _check_same_shape(pred, target)
    d = pred - target
    ad = np.abs(d)
    return float(np.mean(np.where(ad < 1, 0.5 * d * d, ad - 0.5)))


def smooth_l1_grad(pred, target):
    pred, target = _check_same_shape(pred, target)
    d = pred - target
    ad = np.abs(d)
    val = float(np.mean(np.where(ad < 1, 0.5 * d * d, ad - 0.5)))
    return val, np.where(ad < 1, d, np.sign(d)) / d.size


def _lower_median_index(flat):
    # deterministic even-length median: the lower middle element
    return int(np.argsort(flat, kind="stable")[(flat.size - 1) // 2])


def affine_invariant_loss(pred, teacher) -> float:
    return affine_invariant_grad(pred, teacher)[0]


def affine_invariant_grad(pred, teacher):
    """Log-median-normalized RMS depth difference; scale invariant.

    Gradient flows through both the log terms and the median element.
    """
    pred, teacher = _check_same_shape(pred, teacher)
    p = np.maximum(pred, DEPTH_FLOOR)
    t = np.maximum(teacher, DEPTH_FLOOR)
    pf, tf = p.ravel(), t.ravel()
    ip = _lower_median_index(pf)
    it = _lower_median_index(tf)
    e = np.log(pf) - np.log(pf[ip]) - np.log(tf) + np.log(tf[it])
    n = e.size
    val = float(np.sqrt(np.mean(e * e)))
    grad = np.zeros_like(pf)
    if val > 0:
        dl_de = e / (n * val)
        grad = dl_de / pf
        grad[ip] -= dl_de.sum() / pf[ip]
        grad *= (pred.ravel() > DEPTH_FLOOR)
    return val, grad.reshape(pred.shape)


def edge_aware_smoothness(disp, image) -> float:
    return edge_aware_smoothness_grad(disp, image)[0]


def edge_aware_smoothness_grad(disp, image):
    """Mean-normalized, image-edge-weighted disparity smoothness."""
    disp = np.asarray(disp, dtype=np.float64)
    image = _channels(image)
    if disp.shape != image.shape[:2]:
        raise ValidationError("disparity and image sizes differ")
    if disp.shape[0] < 2 or disp.shape[1] < 2:
        raise ValidationError("smoothness needs at least 2 pixels per axis")
    mu = np.mean(disp)
    dstar = disp / mu
    gx = dstar[:, 1:] - dstar[:, :-1]
    gy = dstar[1:, :] - dstar[:-1, :]
    wx = np.exp(-np.mean(np.abs(image[:, 1:] - image[:, :-1]), axis=2))
    wy = np.exp(-np.mean(np.abs(image[1:, :] - image[:-1, :]), axis=2))
    val = float(np.mean(np.abs(gx) * wx) + np.mean(np.abs(gy) * wy))

    g_dstar = np.zeros_like(dstar)
    tx = np.sign(gx) * wx / gx.size
    ty = np.sign(gy) * wy / gy.size
    g_dstar[:, 1:] += tx
    g_dstar[:, :-1] -= tx
    g_dstar[1:, :] += ty
    g_dstar[:-1, :] -= ty
    # d* = d / mean(d)
    grad = (g_dstar - np.mean(g_dstar * dstar)) / mu
    return val, grad


def photometric_loss(pred, target, alpha=0.85) -> float:
    return photometric_grad(pred, target, alpha)[0]


def photometric_grad(pred, target, alpha=0.85):
    """Standard reprojection form: alpha*(1-SSIM)/2 + (1-alpha)*L1."""
    if not (0 <= alpha <= 1):
        raise ValidationError("alpha must lie in [0, 1]")
    s, gs = ssim_grad(pred, target)
    l, gl = l1_loss_grad(pred, target)
    val = alpha * (1 - s) / 2 + (1 - alpha) * l
    return float(val), -alpha / 2 * gs + (1 - alpha) * gl


def localization_loss(tm, sp, sp_tm, smooth, w: LossWeights) -> LossReport:
    """Weighted photometric + smoothness combination (scalar components)."""
    comps = {"tm": float(tm), "sp": float(sp), "sp_tm": float(sp_tm),
             "smooth": float(smooth)}
    weights = {"tm": 1.0, "sp": w.lambda_sp, "sp_tm": w.lambda_sp_tm,
               "smooth": w.lambda_smooth}
    total = sum(weights[k] * comps[k] for k in comps)
    return LossReport(comps, weights, float(total))


def render_loss(pred, gt, w: LossWeights, perceptual=None) -> LossReport:
    """lambda_l1*L1 + lambda_ssim*(1-SSIM) + lambda_perceptual*perceptual."""
    pred, gt = _check_same_shape(pred, gt)
    if w.lambda_perceptual > 0 and perceptual is None:
        raise ValidationError("perceptual weight set but no callback registered")
    comps = {"l1": l1_loss(pred, gt), "ssim_loss": 1.0 - ssim(pred, gt)}
    weights = {"l1": w.lambda_l1, "ssim_loss": w.lambda_ssim}
    absent = perceptual is None
    if not absent:
        comps["perceptual"] = float(perceptual(pred, gt))
        weights["perceptual"] = w.lambda_perceptual
    total = sum(weights[k] * comps[k] for k in comps)
    return LossReport(comps, weights, float(total), perceptual_absent=absent)


def render_loss_grad(pred, gt, w: LossWeights):
    """(LossReport, gradient w.r.t. pred) for the differentiable terms."""
    if w.lambda_perceptual > 0:
        raise ValidationError("perceptual term has no analytic gradient")
    l, gl = l1_loss_grad(pred, gt)
    s, gs = ssim_grad(pred, gt)
    comps = {"l1": l, "ssim_loss": 1.0 - s}
    weights = {"l1": w.lambda_l1, "ssim_loss": w.lambda_ssim}
    total = w.lambda_l1 * l + w.lambda_ssim * (1.0 - s)
    grad = w.lambda_l1 * gl - w.lambda_ssim * gs
    return LossReport(comps, weights, float(total), perceptual_absent=True), grad


def total_loss(render: LossReport, distill: float, loc: float,
               w: LossWeights) -> LossReport:
    comps = {"render": float(render.total), "distill": float(distill),
             "loc": float(loc)}
    weights = {"render": w.lambda_render, "distill": w.lambda_distill,
               "loc": w.lambda_loc}
    total = sum(weights[k] * comps[k] for k in comps)
    return LossReport(comps, weights, float(total))


def psnr(pred, gt) -> float:
    """10*log10(1/MSE) for unit range; identical inputs capped at 100 dB."""
    pred, gt = _check_same_shape(pred, gt)
    mse = float(np.mean((pred - gt) ** 2))
    if mse <= 10 ** (-PSNR_CAP_DB / 10):
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))
