"""Compare the compiled compositing kernel against the numpy fallback.

Usage: python3 benchmarks/benchmark_kernels.py [--sizes 64,128,256] [--repeat 3]
"""

import argparse
import time

import numpy as np

from splatrig.harness import RigSpec, SceneSpec, make_rig, make_scene
from splatrig.losses import l1_loss_grad
from splatrig.rasterizer import HAS_COMPILED, RenderConfig, backward, render_with_state


def bench(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="64,128,256")
    ap.add_argument("--count", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    backends = ["python"] + (["compiled"] if HAS_COMPILED else [])
    if not HAS_COMPILED:
        print("note: compiled extension not built; benchmarking fallback only")
    scene = make_scene(SceneSpec(seed=0, count=args.count))
    print(f"{'size':>6} {'backend':>9} {'forward ms':>11} {'backward ms':>12}")
    for size in (int(s) for s in args.sizes.split(",")):
        cam = make_rig(RigSpec(width=size, height=size))[0]
        ref = None
        for backend in backends:
            cfg = RenderConfig(backend=backend)
            tf, (img, state) = bench(
                lambda: render_with_state(scene, cam.intrinsics, cam.pose, cfg),
                args.repeat)
            _, dl = l1_loss_grad(img.color, np.zeros_like(img.color))
            tb, grads = bench(
                lambda: backward(scene, cam.intrinsics, cam.pose, cfg, dl,
                                 state=state), args.repeat)
            print(f"{size:>6} {backend:>9} {tf * 1e3:>11.2f} {tb * 1e3:>12.2f}")
            if ref is None:
                ref = (img.color, grads.d_mean)
            else:
                dc = np.max(np.abs(img.color - ref[0]))
                dg = np.max(np.abs(grads.d_mean - ref[1]))
                print(f"{'':>6} {'agree':>9} {dc:>11.2e} {dg:>12.2e}")


if __name__ == "__main__":
    main()
