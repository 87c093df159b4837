# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tile-based blending kernels.

Implements the exact semantics contract documented in ``_splat_py`` (3-sigma
support cutoff, transmittance early exit at 1e-4, front-to-back order);
the two backends are interchangeable and parity-tested. Scratch memory for
the reverse sweeps grows with (splats binned to the busiest tile) x 256.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

SIGMA_CUT = 4.5
T_EPS = 1e-4

cdef double C_SIGMA = 4.5
cdef double C_TEPS = 1e-4
cdef int TILE = 16


cdef _bin_tiles(cnp.int32_t[:, ::1] bboxes, int height, int width):
    """CSR tile lists: splat k appears in every tile its bbox overlaps, in
    input (depth) order."""
    cdef int ntx = (width + TILE - 1) // TILE
    cdef int nty = (height + TILE - 1) // TILE
    cdef int n = bboxes.shape[0]
    cdef cnp.int64_t[::1] counts = np.zeros(ntx * nty + 1, dtype=np.int64)
    cdef int k, tx0, tx1, ty0, ty1, tx, ty
    for k in range(n):
        if bboxes[k, 0] >= bboxes[k, 1] or bboxes[k, 2] >= bboxes[k, 3]:
            continue
        tx0 = bboxes[k, 0] // TILE
        tx1 = (bboxes[k, 1] - 1) // TILE
        ty0 = bboxes[k, 2] // TILE
        ty1 = (bboxes[k, 3] - 1) // TILE
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                counts[ty * ntx + tx + 1] += 1
    offsets = np.cumsum(np.asarray(counts), dtype=np.int64)
    cdef cnp.int64_t[::1] offs = offsets
    cdef cnp.int64_t[::1] fill = offsets.copy()
    cdef cnp.int64_t[::1] lists = np.empty(offsets[ntx * nty], dtype=np.int64)
    cdef int t
    for k in range(n):
        if bboxes[k, 0] >= bboxes[k, 1] or bboxes[k, 2] >= bboxes[k, 3]:
            continue
        tx0 = bboxes[k, 0] // TILE
        tx1 = (bboxes[k, 1] - 1) // TILE
        ty0 = bboxes[k, 2] // TILE
        ty1 = (bboxes[k, 3] - 1) // TILE
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                t = ty * ntx + tx
                lists[fill[t]] = k
                fill[t] += 1
    return np.asarray(offs), np.asarray(lists), ntx, nty


def forward(double[:, ::1] means2d, double[:, ::1] conics, double[::1] alphas,
            double[:, ::1] colors, double[::1] zs, double[::1] sky,
            int height, int width, cnp.int32_t[:, ::1] bboxes, collect=False):
    cdef cnp.int64_t[::1] offs
    cdef cnp.int64_t[::1] lists
    cdef int ntx, nty
    offs_a, lists_a, ntx, nty = _bin_tiles(bboxes, height, width)
    offs = offs_a
    lists = lists_a

    color_img = np.zeros((height, width, 3))
    opac_img = np.zeros((height, width))
    dsum_img = np.zeros((height, width))
    cdef double[:, :, ::1] color = color_img
    cdef double[:, ::1] opac = opac_img
    cdef double[:, ::1] dsum = dsum_img

    cdef bint want_contrib = bool(collect)
    contrib = [[] for _ in range(height * width)] if want_contrib else None

    cdef double t_loc[256]
    cdef double col_loc[768]
    cdef double o_loc[256]
    cdef double d_loc[256]

    cdef int ty, tx, px0, px1, py0, py1, x, y, li, k, active
    cdef cnp.int64_t s
    cdef double dx, dy, sigma, alpha, w, t, mu, mv, ca, cb, cc, z, tnew
    cdef int bx0, bx1, by0, by1

    for ty in range(nty):
        for tx in range(ntx):
            px0 = tx * TILE
            px1 = min(px0 + TILE, width)
            py0 = ty * TILE
            py1 = min(py0 + TILE, height)
            active = (px1 - px0) * (py1 - py0)
            for li in range(256):
                t_loc[li] = 1.0
                o_loc[li] = 0.0
                d_loc[li] = 0.0
            for li in range(768):
                col_loc[li] = 0.0

            for s in range(offs[ty * ntx + tx], offs[ty * ntx + tx + 1]):
                if active == 0:
                    break
                k = <int> lists[s]
                mu = means2d[k, 0]
                mv = means2d[k, 1]
                ca = conics[k, 0]
                cb = conics[k, 1]
                cc = conics[k, 2]
                z = zs[k]
                bx0 = max(bboxes[k, 0], px0)
                bx1 = min(bboxes[k, 1], px1)
                by0 = max(bboxes[k, 2], py0)
                by1 = min(bboxes[k, 3], py1)
                for y in range(by0, by1):
                    for x in range(bx0, bx1):
                        li = (y - py0) * TILE + (x - px0)
                        t = t_loc[li]
                        if t < C_TEPS:
                            continue
                        dx = (x + 0.5) - mu
                        dy = (y + 0.5) - mv
                        sigma = 0.5 * (ca * dx * dx + cc * dy * dy) + cb * dx * dy
                        if sigma > C_SIGMA:
                            continue
                        alpha = alphas[k] * exp(-sigma)
                        if alpha <= 0.0:
                            continue
                        w = alpha * t
                        col_loc[li * 3 + 0] += w * colors[k, 0]
                        col_loc[li * 3 + 1] += w * colors[k, 1]
                        col_loc[li * 3 + 2] += w * colors[k, 2]
                        o_loc[li] += w
                        d_loc[li] += w * z
                        tnew = t * (1.0 - alpha)
                        t_loc[li] = tnew
                        if tnew < C_TEPS:
                            active -= 1
                        if want_contrib:
                            contrib[y * width + x].append((k, w))

            for y in range(py0, py1):
                for x in range(px0, px1):
                    li = (y - py0) * TILE + (x - px0)
                    opac[y, x] = o_loc[li]
                    dsum[y, x] = d_loc[li]
                    color[y, x, 0] = col_loc[li * 3 + 0] + (1.0 - o_loc[li]) * sky[0]
                    color[y, x, 1] = col_loc[li * 3 + 1] + (1.0 - o_loc[li]) * sky[1]
                    color[y, x, 2] = col_loc[li * 3 + 2] + (1.0 - o_loc[li]) * sky[2]

    return color_img, opac_img, dsum_img, contrib


def scalar_forward(double[:, ::1] means2d, double[:, ::1] conics,
                   double[::1] alphas, double[::1] values,
                   int height, int width, cnp.int32_t[:, ::1] bboxes):
    cdef cnp.int64_t[::1] offs
    cdef cnp.int64_t[::1] lists
    cdef int ntx, nty
    offs_a, lists_a, ntx, nty = _bin_tiles(bboxes, height, width)
    offs = offs_a
    lists = lists_a

    out_img = np.zeros((height, width))
    cdef double[:, ::1] out = out_img
    cdef double t_loc[256]
    cdef double v_loc[256]

    cdef int ty, tx, px0, px1, py0, py1, x, y, li, k, active
    cdef cnp.int64_t s
    cdef double dx, dy, sigma, alpha, w, t, mu, mv, ca, cb, cc, tnew
    cdef int bx0, bx1, by0, by1

    for ty in range(nty):
        for tx in range(ntx):
            px0 = tx * TILE
            px1 = min(px0 + TILE, width)
            py0 = ty * TILE
            py1 = min(py0 + TILE, height)
            active = (px1 - px0) * (py1 - py0)
            for li in range(256):
                t_loc[li] = 1.0
                v_loc[li] = 0.0

            for s in range(offs[ty * ntx + tx], offs[ty * ntx + tx + 1]):
                if active == 0:
                    break
                k = <int> lists[s]
                mu = means2d[k, 0]
                mv = means2d[k, 1]
                ca = conics[k, 0]
                cb = conics[k, 1]
                cc = conics[k, 2]
                bx0 = max(bboxes[k, 0], px0)
                bx1 = min(bboxes[k, 1], px1)
                by0 = max(bboxes[k, 2], py0)
                by1 = min(bboxes[k, 3], py1)
                for y in range(by0, by1):
                    for x in range(bx0, bx1):
                        li = (y - py0) * TILE + (x - px0)
                        t = t_loc[li]
                        if t < C_TEPS:
                            continue
                        dx = (x + 0.5) - mu
                        dy = (y + 0.5) - mv
                        sigma = 0.5 * (ca * dx * dx + cc * dy * dy) + cb * dx * dy
                        if sigma > C_SIGMA:
                            continue
                        alpha = alphas[k] * exp(-sigma)
                        if alpha <= 0.0:
                            continue
                        w = alpha * t
                        v_loc[li] += w * values[k]
                        tnew = t * (1.0 - alpha)
                        t_loc[li] = tnew
                        if tnew < C_TEPS:
                            active -= 1

            for y in range(py0, py1):
                for x in range(px0, px1):
                    out[y, x] = v_loc[(y - py0) * TILE + (x - px0)]

    return out_img


def backward(double[:, ::1] means2d, double[:, ::1] conics, double[::1] alphas,
             double[:, ::1] colors, double[::1] zs, double[::1] sky,
             int height, int width, cnp.int32_t[:, ::1] bboxes,
             double[:, :, ::1] g_color, g_depth=None):
    cdef cnp.int64_t[::1] offs
    cdef cnp.int64_t[::1] lists
    cdef int ntx, nty
    offs_a, lists_a, ntx, nty = _bin_tiles(bboxes, height, width)
    offs = offs_a
    lists = lists_a

    cdef int n = means2d.shape[0]
    g_screen_a = np.zeros((n, 7))
    g_colors_a = np.zeros((n, 3))
    cdef double[:, ::1] g_screen = g_screen_a
    cdef double[:, ::1] g_col = g_colors_a
    cdef double g_sky0 = 0.0, g_sky1 = 0.0, g_sky2 = 0.0

    cdef bint with_depth = g_depth is not None
    cdef double[:, ::1] g_dep
    if with_depth:
        g_dep = g_depth

    # scratch sized by the busiest tile
    counts = np.diff(offs_a)
    cdef cnp.int64_t max_tile = counts.max() if counts.size else 0
    alpha_buf_a = np.zeros(max(max_tile, 1) * 256)
    w_buf_a = np.zeros(max(max_tile, 1) * 256)
    cdef double[::1] alpha_buf = alpha_buf_a
    cdef double[::1] w_buf = w_buf_a

    cdef double t_loc[256]
    cdef double o_loc[256]
    cdef double dz_loc[256]
    cdef double gz_loc[256]
    cdef double go_loc[256]
    cdef double sc0[256]
    cdef double sc1[256]
    cdef double sc2[256]
    cdef double sw_loc[256]
    cdef double swz_loc[256]

    cdef int ty, tx, px0, px1, py0, py1, x, y, li, k, active, ns
    cdef cnp.int64_t s, base_s
    cdef double dx, dy, sigma, alpha, w, t, mu, mv, ca, cb, cc, z
    cdef double ct0, ct1, ct2, om, tb, dal, gaw, gd
    cdef int bx0, bx1, by0, by1
    cdef cnp.int64_t row

    for ty in range(nty):
        for tx in range(ntx):
            base_s = offs[ty * ntx + tx]
            ns = <int> (offs[ty * ntx + tx + 1] - base_s)
            if ns == 0:
                continue
            px0 = tx * TILE
            px1 = min(px0 + TILE, width)
            py0 = ty * TILE
            py1 = min(py0 + TILE, height)
            active = (px1 - px0) * (py1 - py0)
            for li in range(256):
                t_loc[li] = 1.0
                o_loc[li] = 0.0
                dz_loc[li] = 0.0
                gz_loc[li] = 0.0
                go_loc[li] = 0.0
                sc0[li] = 0.0
                sc1[li] = 0.0
                sc2[li] = 0.0
                sw_loc[li] = 0.0
                swz_loc[li] = 0.0

            # pass 1: replay the forward blend, storing every contact
            for s in range(ns):
                k = <int> lists[base_s + s]
                mu = means2d[k, 0]
                mv = means2d[k, 1]
                ca = conics[k, 0]
                cb = conics[k, 1]
                cc = conics[k, 2]
                z = zs[k]
                bx0 = max(bboxes[k, 0], px0)
                bx1 = min(bboxes[k, 1], px1)
                by0 = max(bboxes[k, 2], py0)
                by1 = min(bboxes[k, 3], py1)
                for y in range(by0, by1):
                    for x in range(bx0, bx1):
                        li = (y - py0) * TILE + (x - px0)
                        row = s * 256 + li
                        w_buf[row] = 0.0
                        if active == 0:
                            continue
                        t = t_loc[li]
                        if t < C_TEPS:
                            continue
                        dx = (x + 0.5) - mu
                        dy = (y + 0.5) - mv
                        sigma = 0.5 * (ca * dx * dx + cc * dy * dy) + cb * dx * dy
                        if sigma > C_SIGMA:
                            continue
                        alpha = alphas[k] * exp(-sigma)
                        if alpha <= 0.0:
                            continue
                        w = alpha * t
                        alpha_buf[row] = alpha
                        w_buf[row] = w
                        o_loc[li] += w
                        dz_loc[li] += w * z
                        t = t * (1.0 - alpha)
                        t_loc[li] = t
                        if t < C_TEPS:
                            active -= 1

            # per-pixel upstream terms from the depth image and the sky
            for y in range(py0, py1):
                for x in range(px0, px1):
                    li = (y - py0) * TILE + (x - px0)
                    if with_depth and o_loc[li] > 1e-6:
                        gd = g_dep[y, x]
                        gz_loc[li] = gd / o_loc[li]
                        go_loc[li] = -gd * dz_loc[li] / (o_loc[li] * o_loc[li])
                    g_sky0 += (1.0 - o_loc[li]) * g_color[y, x, 0]
                    g_sky1 += (1.0 - o_loc[li]) * g_color[y, x, 1]
                    g_sky2 += (1.0 - o_loc[li]) * g_color[y, x, 2]

            # pass 2: back-to-front suffix sweep
            for s in range(ns - 1, -1, -1):
                k = <int> lists[base_s + s]
                mu = means2d[k, 0]
                mv = means2d[k, 1]
                ca = conics[k, 0]
                cb = conics[k, 1]
                cc = conics[k, 2]
                z = zs[k]
                ct0 = colors[k, 0] - sky[0]
                ct1 = colors[k, 1] - sky[1]
                ct2 = colors[k, 2] - sky[2]
                bx0 = max(bboxes[k, 0], px0)
                bx1 = min(bboxes[k, 1], px1)
                by0 = max(bboxes[k, 2], py0)
                by1 = min(bboxes[k, 3], py1)
                for y in range(by0, by1):
                    for x in range(bx0, bx1):
                        li = (y - py0) * TILE + (x - px0)
                        row = s * 256 + li
                        w = w_buf[row]
                        if w == 0.0:
                            continue
                        alpha = alpha_buf[row]
                        tb = w / alpha
                        om = 1.0 - alpha
                        dal = (g_color[y, x, 0] * (tb * ct0 - sc0[li] / om)
                               + g_color[y, x, 1] * (tb * ct1 - sc1[li] / om)
                               + g_color[y, x, 2] * (tb * ct2 - sc2[li] / om))
                        dal += go_loc[li] * (tb - sw_loc[li] / om)
                        dal += gz_loc[li] * (tb * z - swz_loc[li] / om)

                        g_col[k, 0] += w * g_color[y, x, 0]
                        g_col[k, 1] += w * g_color[y, x, 1]
                        g_col[k, 2] += w * g_color[y, x, 2]

                        dx = (x + 0.5) - mu
                        dy = (y + 0.5) - mv
                        gaw = dal * alpha
                        g_screen[k, 0] += gaw * (ca * dx + cb * dy)
                        g_screen[k, 1] += gaw * (cb * dx + cc * dy)
                        g_screen[k, 2] += -0.5 * gaw * dx * dx
                        g_screen[k, 3] += -gaw * dx * dy
                        g_screen[k, 4] += -0.5 * gaw * dy * dy
                        g_screen[k, 5] += gaw * (1.0 - alphas[k])
                        g_screen[k, 6] += gz_loc[li] * w

                        sc0[li] += w * ct0
                        sc1[li] += w * ct1
                        sc2[li] += w * ct2
                        sw_loc[li] += w
                        swz_loc[li] += w * z

    return g_screen_a, g_colors_a, np.array([g_sky0, g_sky1, g_sky2])


def gradsq(double[:, ::1] means2d, double[:, ::1] conics, double[::1] alphas,
           double[:, ::1] colors, double[::1] sky,
           int height, int width, cnp.int32_t[:, ::1] bboxes):
    cdef cnp.int64_t[::1] offs
    cdef cnp.int64_t[::1] lists
    cdef int ntx, nty
    offs_a, lists_a, ntx, nty = _bin_tiles(bboxes, height, width)
    offs = offs_a
    lists = lists_a

    cdef int n = means2d.shape[0]
    m6_a = np.zeros((n, 21))
    y_a = np.zeros((n, 3, 6))
    sw2_a = np.zeros(n)
    cdef double[:, ::1] m6 = m6_a
    cdef double[:, :, ::1] y_acc = y_a
    cdef double[::1] sw2 = sw2_a

    counts = np.diff(offs_a)
    cdef cnp.int64_t max_tile = counts.max() if counts.size else 0
    alpha_buf_a = np.zeros(max(max_tile, 1) * 256)
    w_buf_a = np.zeros(max(max_tile, 1) * 256)
    cdef double[::1] alpha_buf = alpha_buf_a
    cdef double[::1] w_buf = w_buf_a

    cdef double t_loc[256]
    cdef double sc0[256]
    cdef double sc1[256]
    cdef double sc2[256]
    cdef double u[6]

    cdef int ty, tx, px0, px1, py0, py1, x, y, li, k, active, ns, i, j, ti
    cdef int bx0, bx1, by0, by1
    cdef cnp.int64_t s, base_s, row
    cdef double dx, dy, sigma, alpha, w, t, mu, mv, ca, cb, cc
    cdef double ct0, ct1, ct2, om, tb, a0, a1, a2, asum2

    for ty in range(nty):
        for tx in range(ntx):
            base_s = offs[ty * ntx + tx]
            ns = <int> (offs[ty * ntx + tx + 1] - base_s)
            if ns == 0:
                continue
            px0 = tx * TILE
            px1 = min(px0 + TILE, width)
            py0 = ty * TILE
            py1 = min(py0 + TILE, height)
            active = (px1 - px0) * (py1 - py0)
            for li in range(256):
                t_loc[li] = 1.0
                sc0[li] = 0.0
                sc1[li] = 0.0
                sc2[li] = 0.0

            for s in range(ns):
                k = <int> lists[base_s + s]
                mu = means2d[k, 0]
                mv = means2d[k, 1]
                ca = conics[k, 0]
                cb = conics[k, 1]
                cc = conics[k, 2]
                bx0 = max(bboxes[k, 0], px0)
                bx1 = min(bboxes[k, 1], px1)
                by0 = max(bboxes[k, 2], py0)
                by1 = min(bboxes[k, 3], py1)
                for y in range(by0, by1):
                    for x in range(bx0, bx1):
                        li = (y - py0) * TILE + (x - px0)
                        row = s * 256 + li
                        w_buf[row] = 0.0
                        if active == 0:
                            continue
                        t = t_loc[li]
                        if t < C_TEPS:
                            continue
                        dx = (x + 0.5) - mu
                        dy = (y + 0.5) - mv
                        sigma = 0.5 * (ca * dx * dx + cc * dy * dy) + cb * dx * dy
                        if sigma > C_SIGMA:
                            continue
                        alpha = alphas[k] * exp(-sigma)
                        if alpha <= 0.0:
                            continue
                        w = alpha * t
                        alpha_buf[row] = alpha
                        w_buf[row] = w
                        t = t * (1.0 - alpha)
                        t_loc[li] = t
                        if t < C_TEPS:
                            active -= 1

            for s in range(ns - 1, -1, -1):
                k = <int> lists[base_s + s]
                mu = means2d[k, 0]
                mv = means2d[k, 1]
                ca = conics[k, 0]
                cb = conics[k, 1]
                cc = conics[k, 2]
                ct0 = colors[k, 0] - sky[0]
                ct1 = colors[k, 1] - sky[1]
                ct2 = colors[k, 2] - sky[2]
                bx0 = max(bboxes[k, 0], px0)
                bx1 = min(bboxes[k, 1], px1)
                by0 = max(bboxes[k, 2], py0)
                by1 = min(bboxes[k, 3], py1)
                for y in range(by0, by1):
                    for x in range(bx0, bx1):
                        li = (y - py0) * TILE + (x - px0)
                        row = s * 256 + li
                        w = w_buf[row]
                        if w == 0.0:
                            continue
                        alpha = alpha_buf[row]
                        tb = w / alpha
                        om = 1.0 - alpha
                        a0 = tb * ct0 - sc0[li] / om
                        a1 = tb * ct1 - sc1[li] / om
                        a2 = tb * ct2 - sc2[li] / om
                        asum2 = a0 * a0 + a1 * a1 + a2 * a2

                        dx = (x + 0.5) - mu
                        dy = (y + 0.5) - mv
                        u[0] = alpha * (ca * dx + cb * dy)
                        u[1] = alpha * (cb * dx + cc * dy)
                        u[2] = -0.5 * alpha * dx * dx
                        u[3] = -alpha * dx * dy
                        u[4] = -0.5 * alpha * dy * dy
                        u[5] = alpha * (1.0 - alphas[k])

                        ti = 0
                        for i in range(6):
                            for j in range(i, 6):
                                m6[k, ti] += asum2 * u[i] * u[j]
                                ti += 1
                        for i in range(6):
                            y_acc[k, 0, i] += a0 * w * u[i]
                            y_acc[k, 1, i] += a1 * w * u[i]
                            y_acc[k, 2, i] += a2 * w * u[i]
                        sw2[k] += w * w

                        sc0[li] += w * ct0
                        sc1[li] += w * ct1
                        sc2[li] += w * ct2

    return m6_a, y_a, sw2_a
