"""Brute-force per-pixel reference renderer.

Kept deliberately independent of the production path: no tiling, no bbox
culling, its own homogeneous-matrix projection, and scipy's quaternion
implementation for the 3D rotation. Used only as an oracle by the test
suite; it must agree with the tiled renderer on any scene because both
implement the same documented conventions (3-sigma support, 1e-4 early
exit, depth-ascending order with index tie-break, +0.3 dilation).
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .scene import SH_C0, SH_C1, SH_C2, Camera, GaussianCloud, SkyModel


def _sh_color(sh: np.ndarray, direction: np.ndarray, degree: int) -> np.ndarray:
    x, y, z = direction
    acc = SH_C0 * sh[0]
    if degree >= 1:
        acc = acc - SH_C1 * y * sh[1] + SH_C1 * z * sh[2] - SH_C1 * x * sh[3]
    if degree >= 2:
        c0, c1, c2, c3, c4 = SH_C2
        acc = (acc
               + c0 * x * y * sh[4]
               + c1 * y * z * sh[5]
               + c2 * (2 * z * z - x * x - y * y) * sh[6]
               + c3 * x * z * sh[7]
               + c4 * (x * x - y * y) * sh[8])
    return np.clip(acc + 0.5, 0.0, 1.0)


def render_reference(
    world: GaussianCloud, sky: SkyModel, cam: Camera
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (color, depth, opacity) images for a world-space cloud."""
    h, w = cam.height, cam.width
    world_to_cam = np.eye(4)
    world_to_cam[:3, :3] = cam.R
    world_to_cam[:3, 3] = cam.t

    n = len(world)
    homo = np.concatenate([world.mu, np.ones((n, 1))], axis=1)
    p_cam = (world_to_cam @ homo.T).T[:, :3]
    visible = np.nonzero(p_cam[:, 2] > 1e-2)[0]

    splats = []
    for g in visible:
        p = p_cam[g]
        z = p[2]
        # scipy uses (x, y, z, w) quaternion ordering
        qn = world.q[g] / np.linalg.norm(world.q[g])
        rot = Rotation.from_quat([qn[1], qn[2], qn[3], qn[0]]).as_matrix()
        scales = np.exp(world.s_log[g])
        cov3 = rot @ np.diag(scales ** 2) @ rot.T
        jac = np.array([
            [cam.fx / z, 0.0, -cam.fx * p[0] / z ** 2],
            [0.0, cam.fy / z, -cam.fy * p[1] / z ** 2],
        ])
        mproj = jac @ cam.R
        cov2 = mproj @ cov3 @ mproj.T + 0.3 * np.eye(2)
        mean2 = np.array([cam.fx * p[0] / z + cam.cx, cam.fy * p[1] / z + cam.cy])
        conic = np.linalg.inv(cov2)
        direction = world.mu[g] - cam.center
        direction = direction / np.linalg.norm(direction)
        color = _sh_color(world.sh[g], direction, world.degree)
        opacity = 1.0 / (1.0 + np.exp(-world.o_logit[g]))
        splats.append((z, int(g), mean2, conic, opacity, color))

    splats.sort(key=lambda s: (s[0], s[1]))

    color_img = np.zeros((h, w, 3))
    depth_img = np.zeros((h, w))
    opac_img = np.zeros((h, w))
    for row in range(h):
        for col in range(w):
            px = np.array([col + 0.5, row + 0.5])
            trans = 1.0
            acc = np.zeros(3)
            dacc = 0.0
            oacc = 0.0
            for z, _, mean2, conic, opacity, color in splats:
                if trans < 1e-4:
                    break
                d = px - mean2
                sigma = 0.5 * d @ conic @ d
                if sigma > 4.5:
                    continue
                alpha = opacity * np.exp(-sigma)
                if alpha <= 0.0:
                    continue
                wgt = alpha * trans
                acc += wgt * color
                dacc += wgt * z
                oacc += wgt
                trans *= 1.0 - alpha
            color_img[row, col] = acc + (1.0 - oacc) * sky.color
            opac_img[row, col] = oacc
            depth_img[row, col] = dacc / oacc if oacc > 1e-6 else 0.0
    return color_img, depth_img, opac_img
