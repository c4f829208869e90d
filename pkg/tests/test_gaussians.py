import numpy as np
import pytest

from splatrig.gaussians import (
    GaussianCloud,
    RawParamMap,
    S_MAX,
    S_MIN,
    activate,
    activate_rotation,
    activate_scale,
    covariance,
    lift,
    pixel_centers,
    raw_channel_count,
    sigmoid,
)
from splatrig.geometry import CameraIntrinsics, Pose, ValidationError
from splatrig.sh import num_coeffs


def test_raw_channel_count():
    assert raw_channel_count(0) == 11
    assert raw_channel_count(1) == 20


def test_raw_map_validation():
    with pytest.raises(ValidationError):
        RawParamMap(np.zeros((4, 4, 7)), 1)
    bad = np.zeros((2, 2, 20))
    bad[0, 0, 0] = np.inf
    with pytest.raises(ValidationError):
        RawParamMap(bad, 1)


def test_raw_map_slices():
    m = RawParamMap.zeros(3, 5)
    assert m.raw_rotation.shape == (3, 5, 4)
    assert m.raw_opacity.shape == (3, 5)
    assert m.raw_scale.shape == (3, 5, 3)
    assert m.raw_sh.shape == (3, 5, 3, 4)
    assert np.all(m.raw_rotation[..., 0] == 1.0)


def test_activations():
    rng = np.random.default_rng(0)
    q = activate_rotation(rng.normal(size=(10, 4)))
    assert np.allclose(np.linalg.norm(q, axis=1), 1.0)
    # degenerate raw falls back to identity
    assert np.allclose(activate_rotation(np.zeros((1, 4))), [[1, 0, 0, 0]])
    s = activate_scale(np.array([[-100.0, 0.0, 100.0]]))
    assert np.isclose(s[0, 0], S_MIN) and np.isclose(s[0, 2], S_MAX)
    assert np.isclose(s[0, 1], 1.0)
    assert 0 < sigmoid(-25.0) < sigmoid(25.0) < 1
    assert np.isclose(sigmoid(0.0), 0.5)


def test_covariance_psd_and_eigvals():
    rng = np.random.default_rng(1)
    q = activate_rotation(rng.normal(size=(20, 4)))
    s = np.exp(rng.uniform(-2, 1, (20, 3)))
    for i in range(20):
        cov = covariance(q[i], s[i])
        assert np.allclose(cov, cov.T)
        # eigenvalues are the squared scales (oracle: independent eigendecomposition)
        ev = np.sort(np.linalg.eigvalsh(cov))
        assert np.allclose(ev, np.sort(s[i] ** 2), rtol=1e-10)


def test_cloud_validate_and_concat():
    rng = np.random.default_rng(2)
    def make(n):
        return GaussianCloud(
            rng.normal(size=(n, 3)),
            activate_rotation(rng.normal(size=(n, 4))),
            np.full((n, 3), 0.1),
            np.full(n, 0.5),
            rng.normal(size=(n, 3, 4)),
            1,
        )
    a, b = make(3), make(5)
    c = GaussianCloud.concatenate([a, b])
    assert len(c) == 8
    c.validate()
    p = c[4]
    assert np.allclose(p.mean, b.means[1])
    bad = make(2)
    bad.opacities[0] = 1.5
    with pytest.raises(ValidationError):
        bad.validate()


def test_pixel_centers():
    pc = pixel_centers(2, 3)
    assert pc.shape == (6, 2)
    assert np.allclose(pc[0], [0.5, 0.5])
    assert np.allclose(pc[-1], [2.5, 1.5])  # (u, v) of row 1, col 2


def test_lift_geometry():
    k = CameraIntrinsics(40.0, 40.0, 8.0, 6.0, 16, 12)
    pose = Pose.identity()
    depth = np.full((12, 16), 2.0)
    raw = RawParamMap.zeros(12, 16)
    cloud = lift(depth, raw, k, pose, camera_index=3)
    assert len(cloud) == 12 * 16
    # principal-point pixel unprojects onto the optical axis
    idx = 6 * 16 + 8
    assert np.allclose(cloud.means[:, 2], 2.0)
    assert abs(cloud.means[idx, 0]) < 2.0 / 40.0
    assert np.all(cloud.source_camera == 3)
    assert tuple(cloud.source_pixel[17]) == (1, 1)
    # row-major ordering
    assert tuple(cloud.source_pixel[16]) == (1, 0)


def test_lift_rejects_bad_depth():
    raw = RawParamMap.zeros(2, 2)
    k = CameraIntrinsics(10.0, 10.0, 1.0, 1.0, 2, 2)
    with pytest.raises(ValidationError):
        lift(np.array([[1.0, -1.0], [1.0, 1.0]]), raw, k, Pose.identity())
    with pytest.raises(ValidationError):
        lift(np.ones((3, 2)), raw, k, Pose.identity())


def test_activate_full_map():
    rng = np.random.default_rng(3)
    raw = RawParamMap(rng.normal(size=(4, 4, 20)), 1)
    rot, opac, scale, sh = activate(raw)
    assert np.allclose(np.linalg.norm(rot, axis=-1), 1.0)
    assert np.all((opac > 0) & (opac < 1))
    assert np.all((scale >= S_MIN) & (scale <= S_MAX))
    assert sh.shape == (4, 4, 3, num_coeffs(1))
