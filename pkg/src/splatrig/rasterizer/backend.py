"""Kernel backend selection: compiled Cython extension with numpy fallback."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..geometry import ValidationError
from . import kernels_py

try:
    from . import _compositing

    HAS_COMPILED = True
except ImportError:  # extension not built
    _compositing = None
    HAS_COMPILED = False


def resolve_backend(name: str) -> str:
    if name == "auto":
        return "compiled" if HAS_COMPILED else "python"
    if name == "compiled":
        if not HAS_COMPILED:
            raise ValidationError("compiled kernel requested but extension is not built")
        return "compiled"
    if name == "python":
        return "python"
    raise ValidationError(f"unknown backend {name!r}")


def _chunk_ranges(n_tiles: int, threads: int):
    threads = max(1, min(threads, n_tiles)) if n_tiles else 1
    bounds = np.linspace(0, n_tiles, threads + 1).astype(int)
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(threads)]


def forward(backend, mean2d, conic, color, opacity, depth, bbox,
            tile_offsets, tile_items, tile_rects,
            height, width, bg, alpha_min, trans_floor, threads=1):
    if backend == "python":
        return kernels_py.forward(
            mean2d, conic, color, opacity, depth, bbox,
            tile_offsets, tile_items, tile_rects,
            height, width, bg, alpha_min, trans_floor,
        )
    out_color = np.zeros((height, width, 3))
    out_alpha = np.zeros((height, width))
    out_depth = np.zeros((height, width))
    n_tiles = tile_rects.shape[0]

    def run(t0, t1):
        _compositing.forward_range(
            mean2d, conic, color, opacity, depth, bbox,
            tile_offsets, tile_items, tile_rects,
            out_color, out_alpha, out_depth,
            bg, alpha_min, trans_floor, t0, t1,
        )

    ranges = _chunk_ranges(n_tiles, threads)
    if len(ranges) == 1:
        run(*ranges[0])
    else:
        # tiles own disjoint pixels, so parallel writes never collide
        with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
            list(pool.map(lambda r: run(*r), ranges))
    return out_color, out_alpha, out_depth


def backward(backend, mean2d, conic, color, opacity, depth, bbox,
             tile_offsets, tile_items, tile_rects,
             height, width, bg, alpha_min, trans_floor,
             dl_dcolor, threads=1, deterministic=True):
    if backend == "python":
        return kernels_py.backward(
            mean2d, conic, color, opacity, depth, bbox,
            tile_offsets, tile_items, tile_rects,
            height, width, bg, alpha_min, trans_floor, dl_dcolor,
        )
    n = mean2d.shape[0]
    n_tiles = tile_rects.shape[0]
    max_items = 0
    if n_tiles:
        max_items = int(np.max(tile_offsets[1:] - tile_offsets[:-1]))

    def run(t0, t1):
        g_mean2d = np.zeros((n, 2))
        g_conic = np.zeros((n, 3))
        g_color = np.zeros((n, 3))
        g_opacity = np.zeros(n)
        scratch_i = np.zeros(max(max_items, 1), dtype=np.int64)
        scratch_a = np.zeros(max(max_items, 1))
        scratch_e = np.zeros(max(max_items, 1))
        scratch_t = np.zeros(max(max_items, 1))
        _compositing.backward_range(
            mean2d, conic, color, opacity, depth, bbox,
            tile_offsets, tile_items, tile_rects,
            dl_dcolor, bg, alpha_min, trans_floor, t0, t1,
            g_mean2d, g_conic, g_color, g_opacity,
            scratch_i, scratch_a, scratch_e, scratch_t,
        )
        return g_mean2d, g_conic, g_color, g_opacity

    if deterministic or threads <= 1:
        # single fixed-order reduction, independent of thread count
        return run(0, n_tiles)
    ranges = _chunk_ranges(n_tiles, threads)
    with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
        parts = list(pool.map(lambda r: run(*r), ranges))
    # reduce per-chunk buffers in chunk order (deterministic per thread count)
    totals = [np.zeros_like(p) for p in parts[0]]
    for part in parts:
        for tot, p in zip(totals, part):
            tot += p
    return tuple(totals)
