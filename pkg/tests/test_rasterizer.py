import numpy as np
import pytest

from splatrig.gaussians import GaussianCloud, activate_rotation
from splatrig.geometry import CameraIntrinsics, Pose, ValidationError
from splatrig.rasterizer import (
    HAS_COMPILED,
    RenderConfig,
    CULLED,
    project_cloud,
    project_gaussian,
    render,
    render_bruteforce,
    render_with_state,
    resolve_backend,
)
from splatrig.rasterizer.forward import bin_tiles, depth_sorted_order
from splatrig.sh import C0


def make_cloud(rng, n, z_range=(2.0, 8.0), spread=0.8, scale=(0.05, 0.3)):
    q = activate_rotation(rng.normal(size=(n, 4)))
    sh = rng.uniform(-0.5, 0.5, (n, 3, 4))
    means = np.column_stack([
        rng.uniform(-spread, spread, n),
        rng.uniform(-spread, spread, n),
        rng.uniform(*z_range, n),
    ])
    return GaussianCloud(means, q, rng.uniform(*scale, (n, 3)),
                         rng.uniform(0.2, 0.95, n), sh, 1)


def cam(size=32, f=None):
    f = f or size * 1.5
    return CameraIntrinsics(f, f, size / 2, size / 2, size, size)


def solid_cloud(mean, scale, opacity, color):
    # DC-only SH encoding an exact (unclamped) color
    sh = np.zeros((1, 3, 4))
    sh[0, :, 0] = (np.asarray(color) - 0.5) / C0
    return GaussianCloud(np.asarray(mean)[None], np.array([[1.0, 0, 0, 0]]),
                         np.full((1, 3), scale), np.array([opacity]), sh, 1)


# ------------------------------------------------------------------ projection

def test_projection_depth_and_center():
    k = cam(32)
    cloud = solid_cloud([0.0, 0.0, 4.0], 0.1, 0.5, [1, 0, 0])
    st = project_cloud(cloud, k, Pose.identity(), RenderConfig())
    assert st.valid[0]
    assert np.isclose(st.depth[0], 4.0)
    assert np.allclose(st.mean2d[0], [16.0, 16.0])


def test_projection_jacobian_matches_fd():
    # oracle: finite-difference Jacobian of the pinhole projection
    rng = np.random.default_rng(0)
    k = cam(32)
    cfg = RenderConfig()
    for _ in range(20):
        p = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 8)])
        cloud = solid_cloud(p, 0.1, 0.5, [1, 1, 1])
        st = project_cloud(cloud, k, Pose.identity(), cfg)
        h = 1e-6
        fd = np.zeros((2, 3))
        for j in range(3):
            dp, dm = p.copy(), p.copy()
            dp[j] += h
            dm[j] -= h
            a = project_cloud(solid_cloud(dp, 0.1, 0.5, [1, 1, 1]), k,
                              Pose.identity(), cfg).mean2d[0]
            b = project_cloud(solid_cloud(dm, 0.1, 0.5, [1, 1, 1]), k,
                              Pose.identity(), cfg).mean2d[0]
            fd[:, j] = (a - b) / (2 * h)
        assert np.max(np.abs(st.jac[0] - fd)) < 1e-5


def test_cov2d_isotropic_gaussian():
    # an isotropic Gaussian on-axis: cov2d = (s * f / z)^2 I + low_pass I
    k = cam(32, f=48.0)
    cfg = RenderConfig()
    s, z = 0.2, 4.0
    st = project_cloud(solid_cloud([0, 0, z], s, 0.5, [1, 1, 1]), k,
                       Pose.identity(), cfg)
    expect = (s * 48.0 / z) ** 2 + cfg.low_pass
    assert np.allclose(st.cov2d[0], np.diag([expect, expect]), atol=1e-12)


def test_conic_is_inverse_cov():
    rng = np.random.default_rng(1)
    cloud = make_cloud(rng, 30)
    st = project_cloud(cloud, cam(32), Pose.identity(), RenderConfig())
    for i in np.nonzero(st.valid)[0]:
        a, b, c = st.conic[i]
        conic = np.array([[a, b], [b, c]])
        assert np.allclose(conic @ st.cov2d[i], np.eye(2), atol=1e-9)


def test_near_plane_cull():
    cfg = RenderConfig()
    st = project_cloud(solid_cloud([0, 0, cfg.z_near / 2], 0.05, 0.5, [1, 1, 1]),
                       cam(32), Pose.identity(), cfg)
    assert not st.valid[0]
    assert project_gaussian(
        solid_cloud([0, 0, -1.0], 0.05, 0.5, [1, 1, 1])[0],
        cam(32), Pose.identity(), cfg) is CULLED


def test_offscreen_guard_band_cull():
    cfg = RenderConfig()
    st = project_cloud(solid_cloud([50.0, 0, 1.0], 0.3, 0.9, [1, 1, 1]),
                       cam(32), Pose.identity(), cfg)
    assert not st.valid[0]


def test_depth_sort_stable_ties():
    cloud = GaussianCloud.concatenate(
        [solid_cloud([0, 0, 3.0], 0.1, 0.5, [1, 0, 0]) for _ in range(4)]
    )
    st = project_cloud(cloud, cam(32), Pose.identity(), RenderConfig())
    assert list(depth_sorted_order(st)) == [0, 1, 2, 3]


def test_bin_tiles_covers_bbox():
    bbox = np.array([[0, 20, 0, 20], [30, 32, 30, 32]])
    offsets, items, rects = bin_tiles(bbox, 32, 32, 16)
    assert rects.shape[0] == 4
    # first box spans tiles 0,1,2,3; second only the last tile
    assert sorted(items[offsets[0]:offsets[1]]) == [0]
    assert list(items[offsets[3]:offsets[4]]) == [0, 1]


# ----------------------------------------------------------------- compositing

def test_single_gaussian_closed_form():
    # center pixel of an on-axis splat: C = c * o * exp(-0.5 d^T conic d) + bg T
    k = cam(33)  # odd size: a pixel center at the principal point
    cfg = RenderConfig(background=(0.25, 0.5, 0.75))
    cloud = solid_cloud([0, 0, 4.0], 0.2, 0.7, [0.9, 0.2, 0.4])
    st = project_cloud(cloud, k, Pose.identity(), cfg)
    img = render(cloud, k, Pose.identity(), cfg)
    d = np.array([16.5, 16.5]) - st.mean2d[0]
    a, b, c = st.conic[0]
    alpha = 0.7 * np.exp(-0.5 * (a * d[0] ** 2 + c * d[1] ** 2) - b * d[0] * d[1])
    expect = alpha * np.array([0.9, 0.2, 0.4]) + (1 - alpha) * np.array(cfg.background)
    assert np.max(np.abs(img.color[16, 16] - expect)) < 1e-12
    assert abs(img.accum_alpha[16, 16] - alpha) < 1e-12
    assert abs(img.depth[16, 16] - 4.0 * alpha) < 1e-12


def test_two_coincident_gaussians_closed_form():
    k = cam(33)
    cfg = RenderConfig()
    g1 = solid_cloud([0, 0, 4.0], 0.2, 0.6, [1.0, 0.0, 0.0])
    g2 = solid_cloud([0, 0, 4.0], 0.2, 0.3, [0.0, 1.0, 0.0])
    both = GaussianCloud.concatenate([g1, g2])
    img = render(both, k, Pose.identity(), cfg)
    st = project_cloud(both, k, Pose.identity(), cfg)
    d = np.array([16.5, 16.5]) - st.mean2d[0]
    a, b, c = st.conic[0]
    expo = np.exp(-0.5 * (a * d[0] ** 2 + c * d[1] ** 2) - b * d[0] * d[1])
    a1, a2 = 0.6 * expo, 0.3 * expo
    expect = a1 * np.array([1.0, 0, 0]) + (1 - a1) * a2 * np.array([0, 1.0, 0])
    assert np.max(np.abs(img.color[16, 16] - expect)) < 1e-12


def test_background_only():
    cfg = RenderConfig(background=(0.1, 0.2, 0.3))
    img = render(GaussianCloud.empty(), cam(16), Pose.identity(), cfg)
    assert np.allclose(img.color, np.array([0.1, 0.2, 0.3]))
    assert np.all(img.accum_alpha == 0)
    assert np.all(img.depth == 0)


def test_permutation_invariance():
    rng = np.random.default_rng(2)
    cloud = make_cloud(rng, 40)
    cfg = RenderConfig()
    k = cam(32)
    ref = render(cloud, k, Pose.identity(), cfg).color
    perm = rng.permutation(len(cloud))
    shuffled = GaussianCloud(cloud.means[perm], cloud.rotations[perm],
                             cloud.scales[perm], cloud.opacities[perm],
                             cloud.sh[perm], 1)
    out = render(shuffled, k, Pose.identity(), cfg).color
    assert np.max(np.abs(out - ref)) < 1e-12


def test_opacity_zero_limit():
    k = cam(32)
    cfg = RenderConfig(background=(0.3, 0.3, 0.3))
    faint = solid_cloud([0, 0, 4.0], 0.2, 1e-6, [1, 1, 1])
    img = render(faint, k, Pose.identity(), cfg)
    # below alpha_min nothing contributes
    assert np.allclose(img.color, 0.3)


def test_oracle_equivalence_default_cutoffs():
    rng = np.random.default_rng(3)
    k = cam(64)
    cfg = RenderConfig()
    for _ in range(5):
        cloud = make_cloud(rng, 300)
        a = render(cloud, k, Pose.identity(), cfg)
        b = render_bruteforce(cloud, k, Pose.identity(), cfg)
        assert np.max(np.abs(a.color - b.color)) < 1e-5
        assert np.max(np.abs(a.depth - b.depth)) < 1e-4


def test_oracle_equivalence_zero_cutoffs():
    rng = np.random.default_rng(4)
    k = cam(64)
    cfg = RenderConfig(transmittance_floor=0.0, alpha_min=0.0)
    for _ in range(3):
        cloud = make_cloud(rng, 200)
        a = render(cloud, k, Pose.identity(), cfg)
        b = render_bruteforce(cloud, k, Pose.identity(), cfg)
        assert np.max(np.abs(a.color - b.color)) < 1e-6


@pytest.mark.skipif(not HAS_COMPILED, reason="extension not built")
def test_backends_agree():
    rng = np.random.default_rng(5)
    cloud = make_cloud(rng, 150)
    k = cam(48)
    a = render(cloud, k, Pose.identity(), RenderConfig(backend="compiled")).color
    b = render(cloud, k, Pose.identity(), RenderConfig(backend="python")).color
    assert np.max(np.abs(a - b)) < 1e-12


def test_thread_count_bit_identical():
    rng = np.random.default_rng(6)
    cloud = make_cloud(rng, 200)
    k = cam(64)
    imgs = [render(cloud, k, Pose.identity(),
                   RenderConfig(threads=t, deterministic=True)).color
            for t in (1, 2, 8)]
    assert np.array_equal(imgs[0], imgs[1])
    assert np.array_equal(imgs[0], imgs[2])


def test_finite_output_guard():
    cloud = solid_cloud([0, 0, 4.0], 0.2, 0.5, [1, 1, 1])
    cloud.sh[0, 0, 0] = np.nan  # NaN color survives the geometric culls
    with pytest.raises(FloatingPointError):
        render(cloud, cam(16), Pose.identity(), RenderConfig())


def test_resolve_backend_errors():
    with pytest.raises(ValidationError):
        resolve_backend("cuda")
    assert resolve_backend("python") == "python"


def test_config_validation():
    with pytest.raises(ValidationError):
        RenderConfig(tile_size=0)
    with pytest.raises(ValidationError):
        RenderConfig(background=(2.0, 0.0, 0.0))
    with pytest.raises(ValidationError):
        RenderConfig(alpha_min=1.5)
    with pytest.raises(ValidationError):
        RenderConfig(guard_band=0.5)
