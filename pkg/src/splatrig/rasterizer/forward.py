"""Tile-based forward rendering and the brute-force oracle path."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..gaussians import GaussianCloud
from ..geometry import CameraIntrinsics, Pose
from . import backend as kb
from .config import RenderConfig
from .projection import ProjectionState, project_cloud


@dataclass
class RenderedImage:
    color: np.ndarray  # H x W x 3 in [0, 1]
    accum_alpha: np.ndarray  # H x W in [0, 1]
    depth: np.ndarray  # H x W expected depth, sum z_i alpha_i T_i


@dataclass
class RenderState:
    """Everything the backward pass needs from a forward render."""

    projection: ProjectionState
    order: np.ndarray  # depth-sorted indices of non-culled Gaussians
    tile_offsets: np.ndarray
    tile_items: np.ndarray
    tile_rects: np.ndarray
    backend: str


def depth_sorted_order(state: ProjectionState) -> np.ndarray:
    """Ascending camera depth; ties broken by primitive index (stable sort)."""
    valid_idx = np.nonzero(state.valid)[0]
    return valid_idx[np.argsort(state.depth[valid_idx], kind="stable")]


def tile_grid(width, height, tile_size):
    tiles_x = -(-width // tile_size)
    tiles_y = -(-height // tile_size)
    rects = np.zeros((tiles_x * tiles_y, 4), dtype=np.int64)
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            rects[ty * tiles_x + tx] = (
                tx * tile_size, min((tx + 1) * tile_size, width),
                ty * tile_size, min((ty + 1) * tile_size, height),
            )
    return rects, tiles_x, tiles_y


def bin_tiles(bbox_sorted, width, height, tile_size):
    """Assign depth-sorted Gaussians to the tiles their support box overlaps.

    Returns (tile_offsets, tile_items, tile_rects); items within a tile keep
    depth order.
    """
    rects, tiles_x, tiles_y = tile_grid(width, height, tile_size)
    n_tiles = rects.shape[0]
    m = bbox_sorted.shape[0]
    if m == 0:
        return np.zeros(n_tiles + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), rects

    tx0 = bbox_sorted[:, 0] // tile_size
    tx1 = (bbox_sorted[:, 1] - 1) // tile_size + 1
    ty0 = bbox_sorted[:, 2] // tile_size
    ty1 = (bbox_sorted[:, 3] - 1) // tile_size + 1
    nx = tx1 - tx0
    counts = nx * (ty1 - ty0)
    total = int(counts.sum())

    rep = np.repeat(np.arange(m, dtype=np.int64), counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(total, dtype=np.int64) - np.repeat(starts, counts)
    nx_rep = np.repeat(nx, counts)
    tile_x = np.repeat(tx0, counts) + local % nx_rep
    tile_y = np.repeat(ty0, counts) + local // nx_rep
    keys = tile_y * tiles_x + tile_x

    order = np.argsort(keys, kind="stable")
    items = rep[order]
    offsets = np.searchsorted(keys[order], np.arange(n_tiles + 1, dtype=np.int64))
    return offsets.astype(np.int64), items, rects


def _gather_sorted(state: ProjectionState, cloud: GaussianCloud, order):
    return (
        np.ascontiguousarray(state.mean2d[order]),
        np.ascontiguousarray(state.conic[order]),
        np.ascontiguousarray(state.color[order]),
        np.ascontiguousarray(cloud.opacities[order]),
        np.ascontiguousarray(state.depth[order]),
        np.ascontiguousarray(state.bbox[order]),
    )


def _check_finite(img: RenderedImage):
    if not (np.all(np.isfinite(img.color)) and np.all(np.isfinite(img.accum_alpha))
            and np.all(np.isfinite(img.depth))):
        raise FloatingPointError(
            "non-finite rasterizer output: upstream invariant violated "
            "(check primitive validity and camera pose)"
        )


def render_with_state(cloud: GaussianCloud, K: CameraIntrinsics, T: Pose,
                      cfg: RenderConfig):
    backend = kb.resolve_backend(cfg.backend)
    state = project_cloud(cloud, K, T, cfg)
    order = depth_sorted_order(state)
    mean2d, conic, color, opacity, depth, bbox = _gather_sorted(state, cloud, order)
    offsets, items, rects = bin_tiles(bbox, K.width, K.height, cfg.tile_size)
    bg = np.asarray(cfg.background, dtype=np.float64)
    out_color, out_alpha, out_depth = kb.forward(
        backend, mean2d, conic, color, opacity, depth, bbox,
        offsets, items, rects, K.height, K.width,
        bg, cfg.alpha_min, cfg.transmittance_floor, cfg.threads,
    )
    img = RenderedImage(out_color, out_alpha, out_depth)
    _check_finite(img)
    return img, RenderState(state, order, offsets, items, rects, backend)


def render(cloud: GaussianCloud, K: CameraIntrinsics, T: Pose,
           cfg: RenderConfig) -> RenderedImage:
    img, _ = render_with_state(cloud, K, T, cfg)
    return img


def render_bruteforce(cloud: GaussianCloud, K: CameraIntrinsics, T: Pose,
                      cfg: RenderConfig) -> RenderedImage:
    """Oracle renderer: global depth sort, no tiling, no early termination.

    Shares the projection stage with the tiled path but composites each
    Gaussian over its full support box sequentially.
    """
    state = project_cloud(cloud, K, T, cfg)
    order = depth_sorted_order(state)
    h, w = K.height, K.width
    trans = np.ones((h, w))
    acc_c = np.zeros((h, w, 3))
    acc_d = np.zeros((h, w))
    for idx in order:
        x0, x1, y0, y1 = state.bbox[idx]
        mx, my = state.mean2d[idx]
        a, b, c = state.conic[idx]
        dx = (np.arange(x0, x1) + 0.5 - mx)[None, :]
        dy = (np.arange(y0, y1) + 0.5 - my)[:, None]
        power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
        alpha = cloud.opacities[idx] * np.exp(power)
        tsub = trans[y0:y1, x0:x1]
        # same acceptance rule as the tiled kernels (shared contract); every
        # Gaussian is still visited, so there is no early termination here
        contrib = (alpha >= cfg.alpha_min) & (tsub >= cfg.transmittance_floor)
        wgt = np.where(contrib, alpha * tsub, 0.0)
        acc_c[y0:y1, x0:x1] += wgt[..., None] * state.color[idx]
        acc_d[y0:y1, x0:x1] += wgt * state.depth[idx]
        trans[y0:y1, x0:x1] = tsub * np.where(contrib, 1.0 - alpha, 1.0)
    bg = np.asarray(cfg.background, dtype=np.float64)
    img = RenderedImage(acc_c + trans[..., None] * bg, 1.0 - trans, acc_d)
    _check_finite(img)
    return img
