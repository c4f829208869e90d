"""Command-line front end: synth, render, gradcheck, fit, eval, diff.

Every command writes a run manifest next to its outputs. Exit codes:
0 success, 1 validation error, 2 bad arguments, 3 numerical failure.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click
import numpy as np

from . import gradcheck as gc
from . import harness as H
from . import io as sio
from . import losses as L
from .gaussians import GaussianCloud, RawParamMap, lift
from .geometry import ValidationError
from .rasterizer import RenderConfig, render, render_bruteforce


def _catching(fn):
    @functools.wraps(fn)
    def wrapped(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        except (FloatingPointError, H.DivergenceError) as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(3)
    return wrapped


def _render_config(threads, deterministic, backend, tile_size=16):
    return RenderConfig(threads=threads, deterministic=deterministic,
                        backend=backend, tile_size=tile_size)


_common = [
    click.option("--threads", default=1, show_default=True,
                 help="Worker thread cap."),
    click.option("--deterministic/--no-deterministic", default=True,
                 show_default=True, help="Fixed reduction order."),
    click.option("--backend", default="auto", show_default=True,
                 type=click.Choice(["auto", "compiled", "python"])),
]


def common_options(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@click.group()
@click.version_option()
def main():
    """Desk-scale surround-view Gaussian splatting pipeline."""


# -------------------------------------------------------------------- synth

@main.command()
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True)
@click.option("--cameras", default=6, show_default=True)
@click.option("--width", default=64, show_default=True)
@click.option("--height", default=64, show_default=True)
@click.option("--spacing", default=60.0, show_default=True,
              help="Yaw between adjacent cameras, degrees.")
@click.option("--hfov", default=66.0, show_default=True)
@click.option("--radius", default=0.5, show_default=True,
              help="Camera mounting radius, meters.")
@click.option("--count", default=300, show_default=True,
              help="Number of scene Gaussians.")
@click.option("--layout", default="box", show_default=True,
              type=click.Choice(["box", "corridor"]))
@click.option("--shift", default=1.0, show_default=True,
              help="Forward offset of the target rig, meters.")
@click.option("--noise-std", default=0.05, show_default=True,
              help="Teacher depth log-normal noise.")
@common_options
@_catching
def synth(out, seed, cameras, width, height, spacing, hfov, radius, count,
          layout, shift, noise_std, threads, deterministic, backend):
    """Generate a rig, a random scene, and rendered ground-truth views."""
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    rig_spec = H.RigSpec(cameras=cameras, yaw_spacing_deg=spacing,
                         hfov_deg=hfov, width=width, height=height,
                         radius_m=radius)
    cams = H.make_rig(rig_spec)
    tcams = H.translate_rig(cams, [0.0, 0.0, shift])
    scene = H.make_scene(H.SceneSpec(seed=seed, count=count, layout=layout))
    cfg = _render_config(threads, deterministic, backend)

    sio.save_rig(outdir / "rig.json", cams)
    sio.save_rig(outdir / "rig_target.json", tcams)
    sio.save_cloud(outdir / "scene.npz", scene)
    outputs = ["rig.json", "rig_target.json", "scene.npz"]
    teacher = {}
    for i, cam in enumerate(cams):
        img = render(scene, cam.intrinsics, cam.pose, cfg)
        sio.write_ppm(outdir / f"{cam.camera_id}.ppm", img.color)
        outputs.append(f"{cam.camera_id}.ppm")
        teacher[f"depth_{i}"] = H.teacher_depth(
            scene, cam, noise_std=noise_std, seed=seed + 1 + i, cfg=cfg)
    for cam in tcams:
        img = render(scene, cam.intrinsics, cam.pose, cfg)
        sio.write_ppm(outdir / f"target_{cam.camera_id}.ppm", img.color)
        outputs.append(f"target_{cam.camera_id}.ppm")
    np.savez(outdir / "teacher.npz", **teacher)
    outputs.append("teacher.npz")

    sio.write_manifest(
        outdir / "synth_manifest.json", "synth",
        {"cameras": cameras, "width": width, "height": height,
         "spacing": spacing, "hfov": hfov, "radius": radius, "count": count,
         "layout": layout, "shift": shift, "noise_std": noise_std,
         "threads": threads, "deterministic": deterministic,
         "backend": backend,
         "overlap_fraction": H.rig_overlap_fraction(rig_spec)},
        {"seed": seed}, [], sorted(outputs),
    )
    click.echo(f"wrote {len(outputs)} files to {outdir}")


# -------------------------------------------------------------------- render

@main.command("render")
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--rig", "rig_path", required=True, type=click.Path(exists=True))
@click.option("--camera", "camera_id", required=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--oracle", is_flag=True, help="Brute-force reference renderer.")
@click.option("--tile-size", default=16, show_default=True)
@common_options
@_catching
def cmd_render(scene_path, rig_path, camera_id, out, oracle, tile_size,
               threads, deterministic, backend):
    """Render one rig camera from a scene file."""
    cams = sio.load_rig(rig_path)
    cloud = sio.load_cloud(scene_path)
    by_id = {c.camera_id: c for c in cams}
    if camera_id not in by_id:
        raise click.UsageError(
            f"unknown camera id {camera_id!r}; rig has {sorted(by_id)}")
    cam = by_id[camera_id]
    cfg = _render_config(threads, deterministic, backend, tile_size)
    fn = render_bruteforce if oracle else render
    img = fn(cloud, cam.intrinsics, cam.pose, cfg)
    sio.write_ppm(out, img.color)
    sio.write_manifest(
        str(out) + ".manifest.json", "render",
        {"camera": camera_id, "oracle": oracle, "tile_size": tile_size,
         "threads": threads, "deterministic": deterministic, "backend": backend},
        {}, [str(scene_path), str(rig_path)], [str(out)],
    )
    click.echo(f"wrote {out}")


# ----------------------------------------------------------------- gradcheck

@main.command("gradcheck")
@click.option("--seed", default=0, show_default=True)
@click.option("--trials", default=100, show_default=True)
@click.option("--gaussians", default=20, show_default=True)
@click.option("--size", default=8, show_default=True)
@click.option("--threshold", default=1e-3, show_default=True)
@click.option("--out", default=".", show_default=True,
              type=click.Path(file_okay=False))
@common_options
@_catching
def cmd_gradcheck(seed, trials, gaussians, size, threshold, out,
                  threads, deterministic, backend):
    """Compare analytic rasterizer gradients against central differences."""
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    worst, passed = gc.run_gradcheck(seed=seed, trials=trials,
                                     max_gaussians=gaussians, size=size,
                                     threshold=threshold, backend=backend)
    text = gc.report_text(worst, passed, threshold)
    (outdir / "gradcheck_report.txt").write_text(text)
    sio.write_manifest(
        outdir / "gradcheck_manifest.json", "gradcheck",
        {"trials": trials, "gaussians": gaussians, "size": size,
         "threshold": threshold, "threads": threads,
         "deterministic": deterministic, "backend": backend},
        {"seed": seed}, [], ["gradcheck_report.txt"],
    )
    click.echo(text, nl=False)
    if not passed:
        sys.exit(3)


# ----------------------------------------------------------------------- fit

def _load_synth_dir(data):
    datadir = Path(data)
    cams = sio.load_rig(datadir / "rig.json")
    tcams = sio.load_rig(datadir / "rig_target.json")
    inputs = [(sio.read_ppm(datadir / f"{c.camera_id}.ppm"), c) for c in cams]
    targets = [(sio.read_ppm(datadir / f"target_{c.camera_id}.ppm"), c)
               for c in tcams]
    tz = np.load(datadir / "teacher.npz")
    teacher = [tz[f"depth_{i}"] for i in range(len(cams))]
    return inputs, targets, teacher


@main.command("fit")
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory produced by `splatrig synth`.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--iterations", default=500, show_default=True)
@click.option("--step-size", default=1e-2, show_default=True)
@click.option("--free", default="rotation,opacity,scale,sh", show_default=True,
              help="Comma-separated optimized parameter groups.")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False),
              help="Continue from a fit checkpoint.")
@common_options
@_catching
def cmd_fit(data, out, iterations, step_size, free, resume,
            threads, deterministic, backend):
    """Fit per-pixel Gaussian parameters against the target views."""
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    inputs, targets, teacher = _load_synth_dir(data)
    cfg = _render_config(threads, deterministic, backend)
    fit_cfg = H.FitConfig(iterations=iterations, step_size=step_size,
                          free=tuple(free.split(",")))
    opt_state, start = None, 0
    if resume:
        header, raw_maps, depths, opt_state = sio.load_fit_checkpoint(resume)
        init = (raw_maps, depths)
        start = int(header["iteration"])
        if opt_state:
            fit_cfg = H.FitConfig(iterations=iterations,
                                  step_size=float(opt_state["step_size"]),
                                  free=tuple(free.split(",")))
    else:
        init = H.default_init(inputs, teacher)
    res = H.fit_scene(inputs, targets, init=init, fit_cfg=fit_cfg,
                      weights=L.LossWeights(), render_cfg=cfg,
                      teacher_depths=teacher, optimizer_state=opt_state,
                      start_iteration=start)
    end_iter = start + iterations
    sio.save_fit_checkpoint(outdir / "checkpoint.npz", res.raw_maps, res.depths,
                            end_iter, 1, res.optimizer_state)
    sio.save_trace(outdir / "trace.csv", res.trace)
    # metric table is computed from the quantized images written to disk so
    # that `splatrig eval` on the same directories reproduces it exactly
    cloud = GaussianCloud.concatenate([
        lift(res.depths[i], RawParamMap(res.raw_maps[i], 1),
             inputs[i][1].intrinsics, inputs[i][1].pose, i)
        for i in range(len(inputs))
    ])
    pred_files, gt_files = [], []
    for image, cam in targets:
        img = render(cloud, cam.intrinsics, cam.pose, cfg)
        path = outdir / f"pred_target_{cam.camera_id}.ppm"
        sio.write_ppm(path, img.color)
        pred_files.append(path)
        gt_files.append(Path(data) / f"target_{cam.camera_id}.ppm")
    rows = H.evaluate([sio.read_ppm(p) for p in pred_files],
                      [sio.read_ppm(p) for p in gt_files],
                      names=[p.stem for p in pred_files])
    sio.save_metric_table(outdir / "metrics.csv", rows, list(rows[0].keys()))
    sio.write_manifest(
        outdir / "fit_manifest.json", "fit",
        {"iterations": iterations, "step_size": step_size, "free": free,
         "resume": str(resume) if resume else None, "threads": threads,
         "deterministic": deterministic, "backend": backend},
        {}, [str(data)],
        ["checkpoint.npz", "trace.csv", "metrics.csv"]
        + sorted(p.name for p in pred_files),
    )
    click.echo(f"final loss {res.trace[-1]['total']:.6g}; "
               f"mean psnr {rows[-1]['psnr']:.2f} dB")


# ---------------------------------------------------------------------- eval

@main.command("eval")
@click.option("--pred", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--gt", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_catching
def cmd_eval(pred, gt, out):
    """PSNR/SSIM table between two directories of PPM images."""
    pred_files = sorted(Path(pred).glob("*.ppm"))
    gt_files = sorted(Path(gt).glob("*.ppm"))
    if len(pred_files) != len(gt_files):
        raise ValidationError(
            f"{len(pred_files)} prediction vs {len(gt_files)} ground-truth images")
    if not pred_files:
        raise ValidationError("no PPM images found")
    rows = H.evaluate([sio.read_ppm(p) for p in pred_files],
                      [sio.read_ppm(p) for p in gt_files],
                      names=[p.stem for p in pred_files])
    sio.save_metric_table(out, rows, list(rows[0].keys()))
    sio.write_manifest(
        str(out) + ".manifest.json", "eval", {}, {},
        [str(pred), str(gt)], [str(out)],
    )
    for row in rows:
        click.echo(f"{row['view']} psnr {row['psnr']:.4f} ssim {row['ssim']:.6f}")


# ---------------------------------------------------------------------- diff

def _load_arrays(path):
    p = Path(path)
    if p.suffix == ".ppm":
        return {"image": sio.read_ppm(p)}
    if p.suffix == ".npz":
        data = np.load(p, allow_pickle=False)
        return {k: data[k] for k in data.files if k != "header"}
    raise ValidationError(f"{path}: diff supports .ppm and .npz files")


@main.command("diff")
@click.argument("file_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("file_b", type=click.Path(exists=True, dir_okay=False))
@click.option("--tolerance", default=None, type=float,
              help="Exit 3 when the max difference exceeds this.")
@_catching
def cmd_diff(file_a, file_b, tolerance):
    """Maximum per-element difference between two artifact files."""
    a, b = _load_arrays(file_a), _load_arrays(file_b)
    if sorted(a) != sorted(b):
        raise ValidationError(f"field sets differ: {sorted(a)} vs {sorted(b)}")
    worst = 0.0
    for key in sorted(a):
        if a[key].shape != b[key].shape:
            raise ValidationError(
                f"field {key!r}: shape {a[key].shape} vs {b[key].shape}")
        d = float(np.max(np.abs(a[key].astype(np.float64)
                                - b[key].astype(np.float64)))) if a[key].size else 0.0
        worst = max(worst, d)
        click.echo(f"{key} {d:.6e}")
    if tolerance is not None and worst > tolerance:
        click.echo(f"max difference {worst:.6e} exceeds {tolerance:g}", err=True)
        sys.exit(3)


if __name__ == "__main__":
    main()
