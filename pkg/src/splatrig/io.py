"""File formats: PPM images, rig and scene files, checkpoints, tables, manifests.

All conventions (camera-to-world poses, wxyz quaternions, field order) are
recorded explicitly in the files themselves.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import __version__
from .gaussians import GaussianCloud
from .geometry import CameraIntrinsics, CameraModel, Pose, ValidationError
from .sh import num_coeffs

RIG_FORMAT = "splatrig-rig"
SCENE_FORMAT = "splatrig-scene"
CHECKPOINT_FORMAT = "splatrig-checkpoint"
CONVENTIONS = {"pose": "camera_to_world", "quaternion": "wxyz"}


# ------------------------------------------------------------------ PPM images

def write_ppm(path, image: np.ndarray):
    """Binary 8-bit P6; values clipped to [0, 1] and rounded."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError("PPM writer expects an H x W x 3 image")
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P6":
            raise ValidationError(f"{path}: not a binary PPM (P6) file")
        fields = []
        while len(fields) < 3:
            line = fh.readline()
            if not line:
                raise ValidationError(f"{path}: truncated PPM header")
            text = line.split(b"#")[0]
            fields.extend(text.split())
        width, height, maxval = (int(v) for v in fields)
        if maxval != 255:
            raise ValidationError(f"{path}: only 8-bit PPM supported")
        data = fh.read(width * height * 3)
        if len(data) != width * height * 3:
            raise ValidationError(f"{path}: truncated PPM payload")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3)
    return arr.astype(np.float64) / 255.0


# --------------------------------------------------------------------- rig file

def save_rig(path, cameras):
    doc = {
        "format": RIG_FORMAT,
        "version": 1,
        "convention": CONVENTIONS,
        "cameras": [
            {
                "id": cam.camera_id,
                "fx": cam.intrinsics.fx,
                "fy": cam.intrinsics.fy,
                "cx": cam.intrinsics.cx,
                "cy": cam.intrinsics.cy,
                "width": cam.intrinsics.width,
                "height": cam.intrinsics.height,
                "quaternion_wxyz": list(cam.pose.rotation),
                "translation": list(cam.pose.translation),
            }
            for cam in cameras
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_rig(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed rig file at line {exc.lineno}: {exc.msg}")
    if doc.get("format") != RIG_FORMAT:
        raise ValidationError(f"{path}: missing rig format marker (field 'format')")
    if doc.get("convention") != CONVENTIONS:
        raise ValidationError(f"{path}: unsupported pose convention (field 'convention')")
    cams = []
    for i, c in enumerate(doc.get("cameras", [])):
        try:
            cams.append(
                CameraModel(
                    CameraIntrinsics(c["fx"], c["fy"], c["cx"], c["cy"],
                                     c["width"], c["height"]),
                    Pose(np.array(c["quaternion_wxyz"]), np.array(c["translation"])),
                    camera_id=str(c["id"]),
                )
            )
        except KeyError as exc:
            raise ValidationError(f"{path}: camera {i} missing field {exc}")
    return cams


# ------------------------------------------------------------------- scene file

def save_cloud(path, cloud: GaussianCloud):
    header = {
        "format": SCENE_FORMAT,
        "version": 1,
        "convention": CONVENTIONS,
        "field_order": ["means", "quaternions", "scales", "opacities", "sh"],
        "sh_degree": cloud.sh_degree,
        "sh_layout": "channel-major: per channel, (L+1)^2 band coefficients",
    }
    np.savez(
        path,
        header=json.dumps(header),
        means=cloud.means,
        quaternions=cloud.rotations,
        scales=cloud.scales,
        opacities=cloud.opacities,
        sh=cloud.sh,
    )


def load_cloud(path) -> GaussianCloud:
    try:
        data = np.load(path, allow_pickle=False)
    except Exception as exc:
        raise ValidationError(f"{path}: unreadable scene file: {exc}")
    if "header" not in data.files:
        raise ValidationError(f"{path}: missing scene header record")
    header = json.loads(str(data["header"]))
    if header.get("format") != SCENE_FORMAT:
        raise ValidationError(f"{path}: wrong format marker in header")
    for fieldname in ("means", "quaternions", "scales", "opacities", "sh"):
        if fieldname not in data.files:
            raise ValidationError(f"{path}: missing array {fieldname!r}")
    deg = int(header["sh_degree"])
    cloud = GaussianCloud(
        data["means"], data["quaternions"], data["scales"],
        data["opacities"], data["sh"], sh_degree=deg,
    )
    if cloud.sh.shape[1:] != (3, num_coeffs(deg)):
        raise ValidationError(f"{path}: sh array shape does not match header degree")
    return cloud


# ------------------------------------------------------------ fitted checkpoint

def save_fit_checkpoint(path, raw_maps, depths, iteration, sh_degree,
                        optimizer_state=None):
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "convention": CONVENTIONS,
        "cameras": len(raw_maps),
        "sh_degree": sh_degree,
        "iteration": iteration,
        "raw_layout": "rotation wxyz (4), opacity (1), scale (3), sh (3*(L+1)^2)",
    }
    arrays = {"header": json.dumps(header)}
    for i, (raw, depth) in enumerate(zip(raw_maps, depths)):
        arrays[f"raw_{i}"] = raw
        arrays[f"depth_{i}"] = depth
    if optimizer_state:
        for name, arr in optimizer_state.items():
            arrays[f"opt_{name}"] = arr
    np.savez(path, **arrays)


def load_fit_checkpoint(path):
    data = np.load(path, allow_pickle=False)
    if "header" not in data.files:
        raise ValidationError(f"{path}: missing checkpoint header")
    header = json.loads(str(data["header"]))
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: wrong checkpoint format marker")
    n = int(header["cameras"])
    raw_maps = [data[f"raw_{i}"] for i in range(n)]
    depths = [data[f"depth_{i}"] for i in range(n)]
    opt = {
        name[len("opt_"):]: data[name] for name in data.files if name.startswith("opt_")
    }
    return header, raw_maps, depths, opt


# ------------------------------------------------------------- tables and traces

def save_metric_table(path, rows, fieldnames):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def load_metric_table(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def save_trace(path, records):
    """One record per iteration: dicts with identical keys."""
    if not records:
        Path(path).write_text("")
        return
    save_metric_table(path, records, list(records[0].keys()))


def load_trace(path):
    return load_metric_table(path)


# ---------------------------------------------------------------------- manifest

def write_manifest(path, command, config, seeds, inputs, outputs):
    doc = {
        "tool": "splatrig",
        "version": __version__,
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "outputs": outputs,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path):
    return json.loads(Path(path).read_text())
