import numpy as np
import pytest

import splatrig.io as sio
import splatrig.harness as H
from splatrig.geometry import ValidationError


def test_ppm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (12, 17, 3))
    path = tmp_path / "a.ppm"
    sio.write_ppm(path, img)
    back = sio.read_ppm(path)
    assert back.shape == img.shape
    # 8-bit quantization error only
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_ppm_clips_out_of_range(tmp_path):
    path = tmp_path / "b.ppm"
    sio.write_ppm(path, np.full((4, 4, 3), 2.0))
    assert np.all(sio.read_ppm(path) == 1.0)


def test_ppm_header_comments(tmp_path):
    path = tmp_path / "c.ppm"
    payload = bytes(range(2 * 2 * 3))
    path.write_bytes(b"P6\n# a comment\n2 2\n255\n" + payload)
    img = sio.read_ppm(path)
    assert img.shape == (2, 2, 3)


def test_ppm_errors(tmp_path):
    bad = tmp_path / "bad.ppm"
    bad.write_bytes(b"P5\n2 2\n255\n" + b"\x00" * 4)
    with pytest.raises(ValidationError):
        sio.read_ppm(bad)
    trunc = tmp_path / "trunc.ppm"
    trunc.write_bytes(b"P6\n2 2\n255\n\x00\x00")
    with pytest.raises(ValidationError):
        sio.read_ppm(trunc)
    with pytest.raises(ValidationError):
        sio.write_ppm(tmp_path / "x.ppm", np.zeros((4, 4)))


def test_rig_roundtrip(tmp_path):
    cams = H.make_rig(H.RigSpec())
    path = tmp_path / "rig.json"
    sio.save_rig(path, cams)
    back = sio.load_rig(path)
    assert len(back) == 6
    for a, b in zip(cams, back):
        assert a.camera_id == b.camera_id
        assert np.allclose(a.pose.rotation, b.pose.rotation)
        assert np.allclose(a.pose.translation, b.pose.translation)
        assert a.intrinsics == b.intrinsics


def test_rig_diagnostics(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ValidationError, match="line"):
        sio.load_rig(path)
    path.write_text('{"format": "other"}')
    with pytest.raises(ValidationError, match="format"):
        sio.load_rig(path)
    path.write_text(
        '{"format": "splatrig-rig", "convention": {"pose": "camera_to_world", '
        '"quaternion": "wxyz"}, "cameras": [{"id": "c", "fx": 10}]}'
    )
    with pytest.raises(ValidationError, match="camera 0 missing"):
        sio.load_rig(path)


def test_cloud_roundtrip(tmp_path):
    cloud = H.make_scene(H.SceneSpec(seed=1, count=50))
    path = tmp_path / "scene.npz"
    sio.save_cloud(path, cloud)
    back = sio.load_cloud(path)
    assert np.array_equal(back.means, cloud.means)
    assert np.array_equal(back.sh, cloud.sh)
    assert back.sh_degree == cloud.sh_degree


def test_cloud_bad_file(tmp_path):
    path = tmp_path / "junk.npz"
    np.savez(path, stuff=np.zeros(3))
    with pytest.raises(ValidationError, match="header"):
        sio.load_cloud(path)


def test_fit_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    raws = [rng.normal(size=(4, 6, 20)) for _ in range(2)]
    depths = [rng.uniform(1, 5, (4, 6)) for _ in range(2)]
    opt = {"m": rng.normal(size=10), "v": rng.normal(size=10) ** 2,
           "step_size": np.array(0.01), "t": np.array(7)}
    path = tmp_path / "ckpt.npz"
    sio.save_fit_checkpoint(path, raws, depths, iteration=42, sh_degree=1,
                            optimizer_state=opt)
    header, r2, d2, o2 = sio.load_fit_checkpoint(path)
    assert header["iteration"] == 42 and header["cameras"] == 2
    assert all(np.array_equal(a, b) for a, b in zip(raws, r2))
    assert all(np.array_equal(a, b) for a, b in zip(depths, d2))
    assert np.array_equal(o2["m"], opt["m"]) and int(o2["t"]) == 7


def test_metric_table_and_trace(tmp_path):
    rows = [{"view": "a", "psnr": 30.5, "ssim": 0.9},
            {"view": "mean", "psnr": 30.5, "ssim": 0.9}]
    path = tmp_path / "m.csv"
    sio.save_metric_table(path, rows, ["view", "psnr", "ssim"])
    back = sio.load_metric_table(path)
    assert back[0]["view"] == "a" and float(back[1]["psnr"]) == 30.5
    tpath = tmp_path / "t.csv"
    sio.save_trace(tpath, [{"iteration": 0, "total": 1.0}])
    assert float(sio.load_trace(tpath)[0]["total"]) == 1.0
    sio.save_trace(tmp_path / "empty.csv", [])
    assert sio.load_trace(tmp_path / "empty.csv") == []


def test_manifest_roundtrip_deterministic(tmp_path):
    a, b = tmp_path / "m1.json", tmp_path / "m2.json"
    for p in (a, b):
        sio.write_manifest(p, "synth", {"seed": 0, "cameras": 6}, {"seed": 0},
                           [], ["scene.npz"])
    assert a.read_bytes() == b.read_bytes()
    doc = sio.read_manifest(a)
    assert doc["command"] == "synth" and doc["tool"] == "splatrig"
