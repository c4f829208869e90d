"""Pure-numpy compositing kernels (fallback for the compiled extension).

Both backends implement the same per-pixel contract: Gaussians arrive
depth-sorted; a pixel accepts a contribution iff it lies inside the
Gaussian's 3-sigma support box, alpha >= alpha_min, and the pixel's
transmittance has not yet dropped below the early-termination floor.
"""

from __future__ import annotations

import numpy as np


def _alpha_patch(mean2d, conic, opacity, x0, x1, y0, y1):
    xs = np.arange(x0, x1) + 0.5 - mean2d[0]
    ys = np.arange(y0, y1) + 0.5 - mean2d[1]
    dx = xs[None, :]
    dy = ys[:, None]
    a, b, c = conic
    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
    expo = np.exp(power)
    return opacity * expo, expo, dx, dy


def forward(mean2d, conic, color, opacity, depth, bbox,
            tile_offsets, tile_items, tile_rects,
            height, width, bg, alpha_min, trans_floor, threads=1):
    out_color = np.zeros((height, width, 3))
    out_alpha = np.zeros((height, width))
    out_depth = np.zeros((height, width))
    n_tiles = tile_rects.shape[0]

    for t in range(n_tiles):
        tx0, tx1, ty0, ty1 = tile_rects[t]
        items = tile_items[tile_offsets[t]:tile_offsets[t + 1]]
        if items.size == 0:
            out_color[ty0:ty1, tx0:tx1] = bg
            continue
        trans = np.ones((ty1 - ty0, tx1 - tx0))
        acc_c = np.zeros((ty1 - ty0, tx1 - tx0, 3))
        acc_d = np.zeros((ty1 - ty0, tx1 - tx0))
        for idx in items:
            x0 = max(bbox[idx, 0], tx0)
            x1 = min(bbox[idx, 1], tx1)
            y0 = max(bbox[idx, 2], ty0)
            y1 = min(bbox[idx, 3], ty1)
            if x0 >= x1 or y0 >= y1:
                continue
            alpha, _, _, _ = _alpha_patch(mean2d[idx], conic[idx], opacity[idx],
                                          x0, x1, y0, y1)
            tsub = trans[y0 - ty0:y1 - ty0, x0 - tx0:x1 - tx0]
            contrib = (alpha >= alpha_min) & (tsub >= trans_floor)
            w = np.where(contrib, alpha * tsub, 0.0)
            acc_c[y0 - ty0:y1 - ty0, x0 - tx0:x1 - tx0] += w[..., None] * color[idx]
            acc_d[y0 - ty0:y1 - ty0, x0 - tx0:x1 - tx0] += w * depth[idx]
            tsub *= np.where(contrib, 1.0 - alpha, 1.0)
        out_color[ty0:ty1, tx0:tx1] = acc_c + trans[..., None] * bg
        out_alpha[ty0:ty1, tx0:tx1] = 1.0 - trans
        out_depth[ty0:ty1, tx0:tx1] = acc_d

    return out_color, out_alpha, out_depth


def backward(mean2d, conic, color, opacity, depth, bbox,
             tile_offsets, tile_items, tile_rects,
             height, width, bg, alpha_min, trans_floor,
             dl_dcolor, threads=1):
    n = mean2d.shape[0]
    g_mean2d = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_color = np.zeros((n, 3))
    g_opacity = np.zeros(n)
    n_tiles = tile_rects.shape[0]

    for t in range(n_tiles):
        tx0, tx1, ty0, ty1 = tile_rects[t]
        items = tile_items[tile_offsets[t]:tile_offsets[t + 1]]
        if items.size == 0:
            continue
        th, tw = ty1 - ty0, tx1 - tx0
        trans = np.ones((th, tw))
        records = []
        # forward replay, keeping per-contribution state
        for idx in items:
            x0 = max(bbox[idx, 0], tx0)
            x1 = min(bbox[idx, 1], tx1)
            y0 = max(bbox[idx, 2], ty0)
            y1 = min(bbox[idx, 3], ty1)
            if x0 >= x1 or y0 >= y1:
                continue
            alpha, expo, dx, dy = _alpha_patch(mean2d[idx], conic[idx],
                                               opacity[idx], x0, x1, y0, y1)
            sl = (slice(y0 - ty0, y1 - ty0), slice(x0 - tx0, x1 - tx0))
            tsub = trans[sl]
            contrib = (alpha >= alpha_min) & (tsub >= trans_floor)
            records.append((idx, sl, alpha, expo, dx, dy, tsub.copy(), contrib))
            trans[sl] = tsub * np.where(contrib, 1.0 - alpha, 1.0)

        suffix = np.zeros((th, tw, 3))
        t_rel = np.ones((th, tw))
        for idx, sl, alpha, expo, dx, dy, t_before, contrib in reversed(records):
            dl_sub = dl_dcolor[ty0 + sl[0].start:ty0 + sl[0].stop,
                               tx0 + sl[1].start:tx0 + sl[1].stop]
            s_sub = suffix[sl]
            tr_sub = t_rel[sl]
            w = np.where(contrib, alpha * t_before, 0.0)
            g_color[idx] += np.einsum("ijc,ij->c", dl_sub, w)
            # dC/dalpha = T_i (c_i - S_i - bg * T_rel)
            dc_dalpha = t_before[..., None] * (
                color[idx][None, None, :] - s_sub - bg[None, None, :] * tr_sub[..., None]
            )
            dl_dalpha = np.where(contrib, np.einsum("ijc,ijc->ij", dl_sub, dc_dalpha), 0.0)
            g_opacity[idx] += np.sum(dl_dalpha * expo)
            dl_dpower = dl_dalpha * alpha
            a, b, c = conic[idx]
            g_conic[idx, 0] += np.sum(dl_dpower * (-0.5 * dx * dx))
            g_conic[idx, 1] += np.sum(dl_dpower * (-dx * dy))
            g_conic[idx, 2] += np.sum(dl_dpower * (-0.5 * dy * dy))
            g_mean2d[idx, 0] += np.sum(dl_dpower * (a * dx + b * dy))
            g_mean2d[idx, 1] += np.sum(dl_dpower * (b * dx + c * dy))
            suffix[sl] = np.where(contrib[..., None],
                                  color[idx] * alpha[..., None] + (1 - alpha)[..., None] * s_sub,
                                  s_sub)
            t_rel[sl] = np.where(contrib, (1 - alpha) * tr_sub, tr_sub)

    return g_mean2d, g_conic, g_color, g_opacity
