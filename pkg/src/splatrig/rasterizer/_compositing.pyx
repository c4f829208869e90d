# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled compositing kernels: per-pixel front-to-back alpha blending.

Mirrors kernels_py exactly; operates on a contiguous range of tiles so the
caller can fan tiles out across threads (forward writes are disjoint per
tile; backward accumulates into caller-owned buffers).
"""

from libc.math cimport exp

import numpy as np
cimport numpy as cnp

cnp.import_array()


def forward_range(double[:, ::1] mean2d, double[:, ::1] conic,
                  double[:, ::1] color, double[::1] opacity, double[::1] depth,
                  long[:, ::1] bbox,
                  long[::1] tile_offsets, long[::1] tile_items,
                  long[:, ::1] tile_rects,
                  double[:, :, ::1] out_color, double[:, ::1] out_alpha,
                  double[:, ::1] out_depth,
                  double[::1] bg, double alpha_min, double trans_floor,
                  Py_ssize_t t_begin, Py_ssize_t t_end):
    cdef Py_ssize_t t, x, y, k, idx
    cdef long tx0, tx1, ty0, ty1, o0, o1
    cdef double px, py, dx, dy, a, b, c, power, alpha, w, trans
    cdef double cr, cg, cb, dsum
    with nogil:
        for t in range(t_begin, t_end):
            tx0 = tile_rects[t, 0]; tx1 = tile_rects[t, 1]
            ty0 = tile_rects[t, 2]; ty1 = tile_rects[t, 3]
            o0 = tile_offsets[t]; o1 = tile_offsets[t + 1]
            for y in range(ty0, ty1):
                py = y + 0.5
                for x in range(tx0, tx1):
                    px = x + 0.5
                    trans = 1.0
                    cr = 0.0; cg = 0.0; cb = 0.0; dsum = 0.0
                    for k in range(o0, o1):
                        if trans < trans_floor:
                            break
                        idx = tile_items[k]
                        if x < bbox[idx, 0] or x >= bbox[idx, 1]:
                            continue
                        if y < bbox[idx, 2] or y >= bbox[idx, 3]:
                            continue
                        dx = px - mean2d[idx, 0]
                        dy = py - mean2d[idx, 1]
                        a = conic[idx, 0]; b = conic[idx, 1]; c = conic[idx, 2]
                        power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                        alpha = opacity[idx] * exp(power)
                        if alpha < alpha_min:
                            continue
                        w = alpha * trans
                        cr += w * color[idx, 0]
                        cg += w * color[idx, 1]
                        cb += w * color[idx, 2]
                        dsum += w * depth[idx]
                        trans *= 1.0 - alpha
                    out_color[y, x, 0] = cr + trans * bg[0]
                    out_color[y, x, 1] = cg + trans * bg[1]
                    out_color[y, x, 2] = cb + trans * bg[2]
                    out_alpha[y, x] = 1.0 - trans
                    out_depth[y, x] = dsum


def backward_range(double[:, ::1] mean2d, double[:, ::1] conic,
                   double[:, ::1] color, double[::1] opacity, double[::1] depth,
                   long[:, ::1] bbox,
                   long[::1] tile_offsets, long[::1] tile_items,
                   long[:, ::1] tile_rects,
                   double[:, :, ::1] dl_dcolor,
                   double[::1] bg, double alpha_min, double trans_floor,
                   Py_ssize_t t_begin, Py_ssize_t t_end,
                   double[:, ::1] g_mean2d, double[:, ::1] g_conic,
                   double[:, ::1] g_color, double[::1] g_opacity,
                   long[::1] rec_idx, double[::1] rec_alpha,
                   double[::1] rec_expo, double[::1] rec_trans):
    cdef Py_ssize_t t, x, y, k, idx, m, r
    cdef long tx0, tx1, ty0, ty1, o0, o1
    cdef double px, py, dx, dy, a, b, c, power, expo, alpha, trans
    cdef double s0, s1, s2, t_rel, t_i
    cdef double dl0, dl1, dl2, dl_dalpha, dl_dpower, w
    with nogil:
        for t in range(t_begin, t_end):
            tx0 = tile_rects[t, 0]; tx1 = tile_rects[t, 1]
            ty0 = tile_rects[t, 2]; ty1 = tile_rects[t, 3]
            o0 = tile_offsets[t]; o1 = tile_offsets[t + 1]
            if o1 == o0:
                continue
            for y in range(ty0, ty1):
                py = y + 0.5
                for x in range(tx0, tx1):
                    px = x + 0.5
                    dl0 = dl_dcolor[y, x, 0]
                    dl1 = dl_dcolor[y, x, 1]
                    dl2 = dl_dcolor[y, x, 2]
                    # forward replay, recording contributions
                    trans = 1.0
                    m = 0
                    for k in range(o0, o1):
                        if trans < trans_floor:
                            break
                        idx = tile_items[k]
                        if x < bbox[idx, 0] or x >= bbox[idx, 1]:
                            continue
                        if y < bbox[idx, 2] or y >= bbox[idx, 3]:
                            continue
                        dx = px - mean2d[idx, 0]
                        dy = py - mean2d[idx, 1]
                        a = conic[idx, 0]; b = conic[idx, 1]; c = conic[idx, 2]
                        power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                        expo = exp(power)
                        alpha = opacity[idx] * expo
                        if alpha < alpha_min:
                            continue
                        rec_idx[m] = idx
                        rec_alpha[m] = alpha
                        rec_expo[m] = expo
                        rec_trans[m] = trans
                        m += 1
                        trans *= 1.0 - alpha
                    # reverse traversal
                    s0 = 0.0; s1 = 0.0; s2 = 0.0
                    t_rel = 1.0
                    for r in range(m - 1, -1, -1):
                        idx = rec_idx[r]
                        alpha = rec_alpha[r]
                        expo = rec_expo[r]
                        t_i = rec_trans[r]
                        w = alpha * t_i
                        g_color[idx, 0] += dl0 * w
                        g_color[idx, 1] += dl1 * w
                        g_color[idx, 2] += dl2 * w
                        dl_dalpha = (
                            dl0 * t_i * (color[idx, 0] - s0 - bg[0] * t_rel)
                            + dl1 * t_i * (color[idx, 1] - s1 - bg[1] * t_rel)
                            + dl2 * t_i * (color[idx, 2] - s2 - bg[2] * t_rel)
                        )
                        g_opacity[idx] += dl_dalpha * expo
                        dl_dpower = dl_dalpha * alpha
                        dx = px - mean2d[idx, 0]
                        dy = py - mean2d[idx, 1]
                        a = conic[idx, 0]; b = conic[idx, 1]; c = conic[idx, 2]
                        g_conic[idx, 0] += dl_dpower * (-0.5 * dx * dx)
                        g_conic[idx, 1] += dl_dpower * (-dx * dy)
                        g_conic[idx, 2] += dl_dpower * (-0.5 * dy * dy)
                        g_mean2d[idx, 0] += dl_dpower * (a * dx + b * dy)
                        g_mean2d[idx, 1] += dl_dpower * (b * dx + c * dy)
                        s0 = color[idx, 0] * alpha + (1.0 - alpha) * s0
                        s1 = color[idx, 1] * alpha + (1.0 - alpha) * s1
                        s2 = color[idx, 2] * alpha + (1.0 - alpha) * s2
                        t_rel *= 1.0 - alpha
