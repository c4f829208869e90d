import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import splatrig.losses as L
from splatrig.geometry import ValidationError

rng0 = np.random.default_rng(0)


def fd_check(fn, x, grad, h=1e-6, tol=1e-4, skip=None):
    """Central-difference check of a scalar loss gradient."""
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    idx = rng0.choice(flat.size, size=min(40, flat.size), replace=False)
    for i in idx:
        if skip is not None and skip(i):
            continue
        orig = flat[i]
        flat[i] = orig + h
        hi = fn(x)
        flat[i] = orig - h
        lo = fn(x)
        flat[i] = orig
        fd = (hi - lo) / (2 * h)
        assert abs(fd - g[i]) <= tol * max(1.0, abs(fd), abs(g[i])), (i, fd, g[i])


# ---------------------------------------------------------------------- basics

def test_zero_on_identical():
    img = rng0.uniform(0, 1, (16, 16, 3))
    d = rng0.uniform(1, 5, (16, 16))
    assert L.l1_loss(img, img) == 0
    assert L.smooth_l1(d, d) == 0
    assert abs(L.ssim(img, img) - 1) < 1e-6
    assert L.affine_invariant_loss(d, d) == 0
    assert L.photometric_loss(img, img) < 1e-12
    assert L.psnr(img, img) == 100.0


def test_shape_mismatch():
    with pytest.raises(ValidationError):
        L.l1_loss(np.zeros((2, 2)), np.zeros((3, 2)))


def test_l1_and_grad():
    a = rng0.uniform(0, 1, (12, 12, 3))
    b = rng0.uniform(0, 1, (12, 12, 3))
    val, g = L.l1_loss_grad(a, b)
    assert np.isclose(val, np.mean(np.abs(a - b)))
    fd_check(lambda x: L.l1_loss(x, b), a, g)


def test_smooth_l1_regions():
    # quadratic inside the unit kink, linear outside
    assert np.isclose(L.smooth_l1(np.array([0.5]), np.array([0.0])), 0.125)
    assert np.isclose(L.smooth_l1(np.array([3.0]), np.array([0.0])), 2.5)
    p = rng0.uniform(0, 4, (10, 10))
    t = rng0.uniform(0, 4, (10, 10))
    _, g = L.smooth_l1_grad(p, t)
    kink = lambda i: abs(abs(p.reshape(-1)[i] - t.reshape(-1)[i]) - 1) < 1e-5
    fd_check(lambda x: L.smooth_l1(x, t), p, g, skip=kink)


def test_ssim_known_cases():
    a = rng0.uniform(0, 1, (24, 24))
    assert L.ssim_loss(a, a) < 1e-12
    # constant offset degrades SSIM through the luminance term only
    b = np.clip(a + 0.2, 0, 1)
    assert 0 < L.ssim(a, b) < 1
    assert L.ssim(a, 1 - a) < L.ssim(a, b)


def test_ssim_window_too_small():
    with pytest.raises(ValidationError):
        L.ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_ssim_grad_fd():
    a = rng0.uniform(0.2, 0.8, (16, 16))
    b = rng0.uniform(0.2, 0.8, (16, 16))
    _, g = L.ssim_grad(a, b)
    fd_check(lambda x: L.ssim(x, b), a, g, tol=1e-3)


def test_affine_invariance_scaling():
    d = rng0.uniform(0.5, 10, (16, 16))
    for c in (1e-3, 0.5, 1.0, 7.0, 1e3):
        assert L.affine_invariant_loss(c * d, d) < 1e-9


def test_affine_grad_fd():
    p = rng0.uniform(0.5, 5, (8, 8))
    t = rng0.uniform(0.5, 5, (8, 8))
    _, g = L.affine_invariant_grad(p, t)
    # exclude the median element: the lower-median selection is not smooth there
    med = np.argsort(p.reshape(-1), kind="stable")[(p.size - 1) // 2]
    fd_check(lambda x: L.affine_invariant_loss(x, t), p, g,
             skip=lambda i: i == med, tol=1e-3)


def test_smoothness_scale_invariant():
    d = rng0.uniform(1, 5, (12, 12))
    img = rng0.uniform(0, 1, (12, 12, 3))
    a = L.edge_aware_smoothness(d, img)
    b = L.edge_aware_smoothness(10.0 * d, img)
    assert abs(a - b) < 1e-12


def test_smoothness_edge_weighting():
    # a sharp image edge downweights the disparity gradient across it
    d = np.zeros((4, 8))
    d[:, 4:] = 1.0
    flat_img = np.full((4, 8, 3), 0.5)
    edge_img = flat_img.copy()
    edge_img[:, 4:] = 1.0
    assert L.edge_aware_smoothness(d, edge_img) < L.edge_aware_smoothness(d, flat_img)


def test_smoothness_grad_fd():
    d = rng0.uniform(1, 5, (8, 8))
    img = rng0.uniform(0, 1, (8, 8, 3))
    _, g = L.edge_aware_smoothness_grad(d, img)
    fd_check(lambda x: L.edge_aware_smoothness(x, img), d, g, tol=1e-3)


def test_photometric_grad_fd():
    a = rng0.uniform(0.2, 0.8, (16, 16, 3))
    b = rng0.uniform(0.2, 0.8, (16, 16, 3))
    _, g = L.photometric_grad(a, b)
    fd_check(lambda x: L.photometric_loss(x, b), a, g, tol=1e-3)


# ------------------------------------------------------------------ composites

def test_render_loss_weights_and_callback():
    a = rng0.uniform(0, 1, (16, 16, 3))
    b = rng0.uniform(0, 1, (16, 16, 3))
    w = L.LossWeights()
    rep = L.render_loss(a, b, w)
    assert rep.perceptual_absent
    assert np.isclose(rep.total, 0.8 * rep.components["l1"]
                      + 0.2 * rep.components["ssim_loss"])
    w2 = L.LossWeights(lambda_perceptual=0.1)
    with pytest.raises(ValidationError):
        L.render_loss(a, b, w2)
    rep2 = L.render_loss(a, b, w2, perceptual=lambda x, y: 0.5)
    assert np.isclose(rep2.total, rep.total + 0.05)


def test_render_loss_grad_matches_value():
    a = rng0.uniform(0, 1, (16, 16, 3))
    b = rng0.uniform(0, 1, (16, 16, 3))
    w = L.LossWeights()
    rep, g = L.render_loss_grad(a, b, w)
    assert np.isclose(rep.total, L.render_loss(a, b, w).total)
    fd_check(lambda x: L.render_loss(x, b, w).total, a, g, tol=1e-3)


def test_total_loss_paper_weights():
    w = L.LossWeights()
    rep = L.total_loss(L.LossReport({}, {}, 1.0), 1.0, 1.0, w)
    assert rep.total == 1.0105


def test_localization_loss_combination():
    w = L.LossWeights(lambda_sp=2.0, lambda_sp_tm=3.0, lambda_smooth=0.5)
    rep = L.localization_loss(1.0, 1.0, 1.0, 1.0, w)
    assert rep.total == 1.0 + 2.0 + 3.0 + 0.5


def test_report_text():
    rep = L.render_loss(np.zeros((16, 16, 3)), np.zeros((16, 16, 3)),
                        L.LossWeights())
    text = rep.to_text()
    assert "l1 0" in text and "total" in text and "perceptual absent" in text


def test_weight_validation():
    with pytest.raises(ValidationError):
        L.LossWeights(lambda_l1=-0.1)
    with pytest.raises(ValidationError):
        L.LossWeights(photometric_alpha=1.5)


def test_psnr_cases():
    a = np.zeros((8, 8))
    b = np.full((8, 8), 0.1)
    assert np.isclose(L.psnr(a, b), 20.0)
    assert L.psnr(a, a) == 100.0


# ------------------------------------------------------------------ properties

@given(st.integers(0, 2**32 - 1), st.floats(0.1, 100.0))
@settings(max_examples=25, deadline=None)
def test_affine_invariance_property(seed, c):
    d = np.random.default_rng(seed).uniform(0.2, 20.0, (8, 8))
    assert L.affine_invariant_loss(c * d, d) < 1e-9


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_psnr_ssim_bounds_property(seed):
    r = np.random.default_rng(seed)
    a = r.uniform(0, 1, (12, 12))
    b = r.uniform(0, 1, (12, 12))
    assert -1.0 <= L.ssim(a, b) <= 1.0
    assert L.psnr(a, b) <= 100.0
    assert L.l1_loss(a, b) >= 0


@given(st.integers(0, 2**32 - 1), st.floats(1.5, 50.0))
@settings(max_examples=25, deadline=None)
def test_smoothness_scale_property(seed, c):
    r = np.random.default_rng(seed)
    d = r.uniform(0.5, 5.0, (6, 6))
    img = r.uniform(0, 1, (6, 6, 3))
    assert abs(L.edge_aware_smoothness(d, img)
               - L.edge_aware_smoothness(c * d, img)) < 1e-10
