"""NumPy fallback for the per-pixel blending kernels.

Shared semantics contract (the compiled backend implements the same rules):

- splats arrive pre-sorted by ascending view depth;
- a splat covers a pixel iff its Mahalanobis half-distance
  sigma = 0.5 * d^T conic d is <= 4.5 (the 3-sigma support cutoff);
- a pixel accepts contributions only while its transmittance T >= 1e-4;
- front-to-back blending: w = alpha * T, then T *= (1 - alpha);
- pixel (row, col) samples at (col + 0.5, row + 0.5).

This implementation iterates splat-major with whole-bbox array ops; because
transmittance decreases monotonically, masking T < 1e-4 is exactly equivalent
to the per-pixel early-exit break of the compiled backend.
"""

from __future__ import annotations

import numpy as np

SIGMA_CUT = 4.5
T_EPS = 1e-4

# upper-triangle index pairs of a 6x6 symmetric matrix, row-major
_TRIU6 = [(i, j) for i in range(6) for j in range(i, 6)]


def _splat_footprint(means2d, conics, bboxes, k, trans):
    """Per-bbox delta grids, sigma, and the coverage mask for splat k.

    Returns None when the bbox is empty or nothing passes the sigma and
    transmittance tests.
    """
    x0, x1, y0, y1 = bboxes[k]
    if x0 >= x1 or y0 >= y1:
        return None
    dx = (np.arange(x0, x1) + 0.5) - means2d[k, 0]
    dy = (np.arange(y0, y1) + 0.5) - means2d[k, 1]
    dx = np.broadcast_to(dx[None, :], (y1 - y0, x1 - x0))
    dy = np.broadcast_to(dy[:, None], (y1 - y0, x1 - x0))
    a, b, c = conics[k]
    sigma = 0.5 * (a * dx * dx + c * dy * dy) + b * dx * dy
    tl = trans[y0:y1, x0:x1]
    mask = (sigma <= SIGMA_CUT) & (tl >= T_EPS)
    if not mask.any():
        return None
    return (x0, x1, y0, y1), dx, dy, sigma, tl, mask


def forward(means2d, conics, alphas, colors, zs, sky, height, width, bboxes,
            collect=False):
    """Blend depth-sorted splats into color / opacity / depth-sum images.

    Returns (color HxWx3 with sky composited, opacity HxW, depth_sum HxW,
    contributions). ``contributions`` is a row-major list of per-pixel
    (splat_index, weight) lists when ``collect`` else None.
    """
    n = means2d.shape[0]
    trans = np.ones((height, width))
    color = np.zeros((height, width, 3))
    opac = np.zeros((height, width))
    dsum = np.zeros((height, width))
    contrib = [[] for _ in range(height * width)] if collect else None

    for k in range(n):
        hit = _splat_footprint(means2d, conics, bboxes, k, trans)
        if hit is None:
            continue
        (x0, x1, y0, y1), _, _, sigma, tl, mask = hit
        alpha = np.where(mask, alphas[k] * np.exp(-np.where(mask, sigma, 0.0)), 0.0)
        w = alpha * tl
        color[y0:y1, x0:x1] += w[:, :, None] * colors[k]
        opac[y0:y1, x0:x1] += w
        dsum[y0:y1, x0:x1] += w * zs[k]
        trans[y0:y1, x0:x1] = np.where(mask, tl * (1.0 - alpha), tl)
        if collect:
            for iy, ix in zip(*np.nonzero(mask)):
                contrib[(y0 + iy) * width + (x0 + ix)].append((k, w[iy, ix]))

    color += (1.0 - opac)[:, :, None] * sky
    return color, opac, dsum, contrib


def scalar_forward(means2d, conics, alphas, values, height, width, bboxes):
    """Blend one non-color scalar per splat with the exact forward weights.
    No sky term."""
    n = means2d.shape[0]
    trans = np.ones((height, width))
    out = np.zeros((height, width))
    for k in range(n):
        hit = _splat_footprint(means2d, conics, bboxes, k, trans)
        if hit is None:
            continue
        (x0, x1, y0, y1), _, _, sigma, tl, mask = hit
        alpha = np.where(mask, alphas[k] * np.exp(-np.where(mask, sigma, 0.0)), 0.0)
        w = alpha * tl
        out[y0:y1, x0:x1] += w * values[k]
        trans[y0:y1, x0:x1] = np.where(mask, tl * (1.0 - alpha), tl)
    return out


def _replay(means2d, conics, alphas, colors, zs, height, width, bboxes):
    """Forward replay storing every contact so the reverse sweep sees the
    exact same weights the rendered image used."""
    n = means2d.shape[0]
    trans = np.ones((height, width))
    opac = np.zeros((height, width))
    dsum = np.zeros((height, width))
    contacts: list = [None] * n
    for k in range(n):
        hit = _splat_footprint(means2d, conics, bboxes, k, trans)
        if hit is None:
            continue
        (x0, x1, y0, y1), dx, dy, sigma, tl, mask = hit
        alpha = np.where(mask, alphas[k] * np.exp(-np.where(mask, sigma, 0.0)), 0.0)
        mask = mask & (alpha > 0)  # guards the w / alpha division in reverse sweeps
        w = alpha * tl
        opac[y0:y1, x0:x1] += w
        dsum[y0:y1, x0:x1] += w * zs[k]
        trans[y0:y1, x0:x1] = np.where(mask, tl * (1.0 - alpha), tl)
        contacts[k] = ((x0, x1, y0, y1), dx, dy, alpha, w, mask)
    return contacts, opac, dsum


def backward(means2d, conics, alphas, colors, zs, sky, height, width, bboxes,
             g_color, g_depth=None):
    """Reverse-mode pass for the forward blend.

    ``g_color`` is dLoss/dColorImage (HxWx3); ``g_depth`` optionally
    dLoss/dDepthImage (HxW) where the depth image is the opacity-normalized
    weighted depth (zero where opacity <= 1e-6, matching the forward sentinel).

    Returns (g_screen (N,7), g_colors (N,3), g_sky (3,)). g_screen columns:
    d/d mean_u, mean_v, conic_a, conic_b, conic_c, opacity_logit, view_z.
    """
    n = means2d.shape[0]
    contacts, opac, dsum = _replay(means2d, conics, alphas, colors, zs,
                                   height, width, bboxes)

    g_z_pix = np.zeros((height, width))
    g_o_pix = np.zeros((height, width))
    if g_depth is not None:
        seen = opac > 1e-6
        g_z_pix[seen] = g_depth[seen] / opac[seen]
        g_o_pix[seen] = -g_depth[seen] * dsum[seen] / opac[seen] ** 2

    g_sky = ((1.0 - opac)[:, :, None] * g_color).sum(axis=(0, 1))

    ct = colors - sky[None, :]
    suff_c = np.zeros((height, width, 3))
    suff_w = np.zeros((height, width))
    suff_wz = np.zeros((height, width))
    g_screen = np.zeros((n, 7))
    g_colors = np.zeros((n, 3))

    for k in range(n - 1, -1, -1):
        if contacts[k] is None:
            continue
        (x0, x1, y0, y1), dx, dy, alpha, w, mask = contacts[k]
        gc = g_color[y0:y1, x0:x1]
        t_before = np.where(mask, w / np.where(mask, alpha, 1.0), 0.0)
        om = np.where(mask, 1.0 - alpha, 1.0)
        dalpha = np.zeros_like(w)
        for ch in range(3):
            dalpha += gc[:, :, ch] * (t_before * ct[k, ch]
                                      - suff_c[y0:y1, x0:x1, ch] / om)
        dalpha += g_o_pix[y0:y1, x0:x1] * (t_before - suff_w[y0:y1, x0:x1] / om)
        dalpha += g_z_pix[y0:y1, x0:x1] * (t_before * zs[k]
                                           - suff_wz[y0:y1, x0:x1] / om)
        dalpha = np.where(mask, dalpha, 0.0)

        g_colors[k] = (w[:, :, None] * gc).sum(axis=(0, 1))
        base = dalpha * alpha
        a, b, c = conics[k]
        g_screen[k, 0] = (base * (a * dx + b * dy)).sum()
        g_screen[k, 1] = (base * (b * dx + c * dy)).sum()
        g_screen[k, 2] = (-0.5 * base * dx * dx).sum()
        g_screen[k, 3] = (-base * dx * dy).sum()
        g_screen[k, 4] = (-0.5 * base * dy * dy).sum()
        g_screen[k, 5] = (base * (1.0 - alphas[k])).sum()
        g_screen[k, 6] = (g_z_pix[y0:y1, x0:x1] * w).sum()

        suff_c[y0:y1, x0:x1] += w[:, :, None] * ct[k]
        suff_w[y0:y1, x0:x1] += w
        suff_wz[y0:y1, x0:x1] += w * zs[k]

    return g_screen, g_colors, g_sky


def gradsq(means2d, conics, alphas, colors, sky, height, width, bboxes):
    """Per-splat accumulators for summed squared pixel-channel derivatives.

    For pixel p, channel ch, splat k, the derivative of the pixel w.r.t. the
    splat's own screen parameters factorizes as a_ch * u + w * (color part),
    where a_ch is the blend derivative w.r.t. effective alpha and u is the
    6-vector d alpha' / d (mean_u, mean_v, conic_a, conic_b, conic_c,
    opacity_logit'); the color part lives in per-view-constant directions and
    is folded in afterwards. This kernel accumulates, per splat:

      m6  = sum over contacts of (sum_ch a_ch^2) * u u^T   (packed 6x6 triu)
      y   = sum over contacts of a_ch * w * u              (per channel)
      sw2 = sum over contacts of w^2

    Note u's opacity entry uses d alpha' / d o_logit = alpha' * (1 - o_act).
    """
    n = means2d.shape[0]
    contacts, _, _ = _replay(means2d, conics, alphas, colors, zs=np.zeros(n),
                             height=height, width=width, bboxes=bboxes)
    ct = colors - sky[None, :]
    suff_c = np.zeros((height, width, 3))
    m6 = np.zeros((n, 21))
    y_acc = np.zeros((n, 3, 6))
    sw2 = np.zeros(n)

    for k in range(n - 1, -1, -1):
        if contacts[k] is None:
            continue
        (x0, x1, y0, y1), dx, dy, alpha, w, mask = contacts[k]
        t_before = np.where(mask, w / np.where(mask, alpha, 1.0), 0.0)
        om = np.where(mask, 1.0 - alpha, 1.0)
        a_ch = np.where(
            mask[:, :, None],
            t_before[:, :, None] * ct[k][None, None, :]
            - suff_c[y0:y1, x0:x1] / om[:, :, None],
            0.0,
        )

        aq, bq, cq = conics[k]
        u = np.stack([
            alpha * (aq * dx + bq * dy),
            alpha * (bq * dx + cq * dy),
            -0.5 * alpha * dx * dx,
            -alpha * dx * dy,
            -0.5 * alpha * dy * dy,
            alpha * (1.0 - alphas[k]),
        ], axis=-1)
        u = np.where(mask[:, :, None], u, 0.0)

        asum2 = (a_ch ** 2).sum(axis=-1)
        for t, (i, j) in enumerate(_TRIU6):
            m6[k, t] = (asum2 * u[:, :, i] * u[:, :, j]).sum()
        y_acc[k] = np.einsum("yxc,yx,yxu->cu", a_ch, w, u)
        sw2[k] = (w ** 2).sum()

        suff_c[y0:y1, x0:x1] += w[:, :, None] * ct[k]

    return m6, y_acc, sw2
