"""Analytic backward pass of the rasterizer and the squared-gradient
accumulators feeding the Fisher ledger.

Both paths share the per-view linearization from ``view_jacobians``: the
blending kernels produce screen-space gradients (or squared-gradient
moments), which are mapped to Gaussian parameters with one einsum per view.
The forward pass's support cutoff and transmittance early exit are replayed
identically, so gradients differentiate the function actually rendered.
Rigid-track poses and camera parameters are treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ShapeMismatchError
from .projection import project_view, view_jacobians
from .scene import (
    Camera,
    GaussianCloud,
    RigidPoseTrack,
    SkyModel,
    compose_world,
    flatten_params,
    per_gaussian_pose,
    sh_coeff_count,
    unflatten_params,
)

_TRIU6 = [(i, j) for i in range(6) for j in range(i, 6)]


@dataclass
class ParamGrad:
    """Gradients matching the cloud's field layout plus the sky color.
    Culled Gaussians hold zeros."""

    mu: np.ndarray       # (N, 3)
    q: np.ndarray        # (N, 4)
    s_log: np.ndarray    # (N, 3)
    o_logit: np.ndarray  # (N,)
    sh: np.ndarray       # (N, K, 3)
    sky: np.ndarray      # (3,)

    @staticmethod
    def zeros(cloud: GaussianCloud) -> "ParamGrad":
        n = len(cloud)
        k = sh_coeff_count(cloud.degree)
        return ParamGrad(
            np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)),
            np.zeros(n), np.zeros((n, k, 3)), np.zeros(3),
        )

    def flat(self) -> np.ndarray:
        """(N, P) matrix in the documented flattening order (sky excluded)."""
        n = self.mu.shape[0]
        return np.concatenate(
            [self.mu, self.q, self.s_log, self.o_logit[:, None],
             self.sh.reshape(n, -1)],
            axis=1,
        )

    def scaled(self, factor: float) -> "ParamGrad":
        return ParamGrad(
            self.mu * factor, self.q * factor, self.s_log * factor,
            self.o_logit * factor, self.sh * factor, self.sky * factor,
        )

    def add(self, other: "ParamGrad") -> "ParamGrad":
        return ParamGrad(
            self.mu + other.mu, self.q + other.q, self.s_log + other.s_log,
            self.o_logit + other.o_logit, self.sh + other.sh,
            self.sky + other.sky,
        )


@dataclass
class GradSq:
    """Sum over pixels and channels of squared pixel derivatives, per
    parameter slot, and its per-Gaussian scalar reduction."""

    per_param: np.ndarray    # (N, P)
    per_gaussian: np.ndarray  # (N,)


def _geometry_grad(pv, vj, g_screen, g_colors):
    """Map kernel outputs to the 11 geometry parameters of each splat."""
    g11 = np.einsum("nit,ni->nt", vj.b_tensor, g_screen)
    g11[:, 0:3] += np.einsum("nc,nci->ni", g_colors, vj.d_color_mu)
    return g11


def backward(
    cloud: GaussianCloud,
    tracks: list[RigidPoseTrack],
    sky: SkyModel,
    cam: Camera,
    t: int,
    pixel_loss_grad: np.ndarray,
    depth_loss_grad: np.ndarray | None = None,
) -> ParamGrad:
    """dLoss/dParameters for a loss whose pixel gradients are given.

    ``pixel_loss_grad`` is dLoss/dColorImage of shape (H, W, 3);
    ``depth_loss_grad`` optionally dLoss/dDepthImage of shape (H, W) against
    the opacity-normalized depth output.
    """
    pixel_loss_grad = np.asarray(pixel_loss_grad, float)
    if pixel_loss_grad.shape != (cam.height, cam.width, 3):
        raise ShapeMismatchError(
            f"pixel gradient shape {pixel_loss_grad.shape} does not match "
            f"camera resolution {(cam.height, cam.width, 3)}"
        )
    if depth_loss_grad is not None:
        depth_loss_grad = np.asarray(depth_loss_grad, float)
        if depth_loss_grad.shape != (cam.height, cam.width):
            raise ShapeMismatchError(
                f"depth gradient shape {depth_loss_grad.shape} does not match "
                f"camera resolution {(cam.height, cam.width)}"
            )

    out = ParamGrad.zeros(cloud)
    has_rigid = len(cloud) and (cloud.group != 0).any()
    rot_v = rq_v = None
    if has_rigid:
        rot_v, _, rq_v = per_gaussian_pose(cloud, tracks, t)
    world = compose_world(cloud, tracks, t)
    pv = project_view(world, cam)
    if len(pv) == 0:
        out.sky = pixel_loss_grad.sum(axis=(0, 1))
        return out

    g_screen, g_colors, g_sky = _kernels.backward(
        pv.means2d, pv.conics, pv.alphas, pv.colors, pv.zs,
        np.ascontiguousarray(sky.color, float),
        cam.height, cam.width, pv.bboxes,
        np.ascontiguousarray(pixel_loss_grad),
        None if depth_loss_grad is None else np.ascontiguousarray(depth_loss_grad),
    )
    vj = view_jacobians(pv, world, cam, rot_v, rq_v)
    g11 = _geometry_grad(pv, vj, g_screen, g_colors)

    out.mu[pv.idx] = g11[:, 0:3]
    out.q[pv.idx] = g11[:, 3:7]
    out.s_log[pv.idx] = g11[:, 7:10]
    out.o_logit[pv.idx] = g11[:, 10]
    # dLoss/dSH: gate * blend weight sum * basis, per channel
    out.sh[pv.idx] = (pv.gates * g_colors)[:, None, :] * pv.basis[:, :, None]
    out.sky = g_sky
    return out


def per_gaussian_gradsq(
    cloud: GaussianCloud,
    tracks: list[RigidPoseTrack],
    sky: SkyModel,
    cam: Camera,
    t: int = 0,
) -> GradSq:
    """Sum over pixels and channels of (d pixel / d parameter)^2.

    Equivalent to one backward call per pixel and channel with a one-hot
    upstream gradient, squaring and summing, but fused: per contact the
    derivative w.r.t. splat k factorizes into its alpha path (a_ch * u^T B)
    and its color path (w * D), so the squared sum expands into three
    per-view moments accumulated by the kernel.
    """
    n = len(cloud)
    k = sh_coeff_count(cloud.degree)
    per_param = np.zeros((n, 11 + 3 * k))

    has_rigid = n and (cloud.group != 0).any()
    rot_v = rq_v = None
    if has_rigid:
        rot_v, _, rq_v = per_gaussian_pose(cloud, tracks, t)
    world = compose_world(cloud, tracks, t)
    pv = project_view(world, cam)
    if len(pv) == 0:
        return GradSq(per_param, per_param.sum(axis=1))

    m6_packed, y_acc, sw2 = _kernels.gradsq(
        pv.means2d, pv.conics, pv.alphas, pv.colors,
        np.ascontiguousarray(sky.color, float),
        cam.height, cam.width, pv.bboxes,
    )
    m = len(pv)
    m6 = np.zeros((m, 6, 6))
    for t_idx, (i, j) in enumerate(_TRIU6):
        m6[:, i, j] = m6_packed[:, t_idx]
        m6[:, j, i] = m6_packed[:, t_idx]

    vj = view_jacobians(pv, world, cam, rot_v, rq_v)
    b6 = vj.b_tensor[:, 0:6, :]
    d_full = np.zeros((m, 3, 11))
    d_full[:, :, 0:3] = vj.d_color_mu

    geom = np.einsum("nit,nij,njt->nt", b6, m6, b6)
    by = np.einsum("nit,nci->nct", b6, y_acc)
    geom += 2.0 * np.einsum("nct,nct->nt", by, d_full)
    geom += sw2[:, None] * (d_full ** 2).sum(axis=1)
    # exact expansion of a sum of squares; clip accumulated FP dust
    geom = np.maximum(geom, 0.0)

    sh_sq = (pv.gates * sw2[:, None])[:, None, :] * (pv.basis ** 2)[:, :, None]

    per_param[pv.idx, 0:11] = geom
    per_param[pv.idx, 11:] = sh_sq.reshape(m, -1)
    return GradSq(per_param, per_param.sum(axis=1))


def fd_gradient_oracle(
    cloud: GaussianCloud,
    tracks: list[RigidPoseTrack],
    sky: SkyModel,
    cam: Camera,
    t: int,
    loss_fn,
    step: float = 1e-3,
) -> ParamGrad:
    """Central finite differences of ``loss_fn(cloud, sky)`` over every
    Gaussian parameter and the sky color. Test oracle only."""
    if step <= 0:
        raise ValueError("step must be positive")
    base = flatten_params(cloud)
    grad = ParamGrad.zeros(cloud)
    flat_grad = np.zeros_like(base)
    for gi in range(base.shape[0]):
        for pi in range(base.shape[1]):
            plus = base.copy()
            plus[gi, pi] += step
            minus = base.copy()
            minus[gi, pi] -= step
            lp = loss_fn(unflatten_params(cloud, plus), sky)
            lm = loss_fn(unflatten_params(cloud, minus), sky)
            flat_grad[gi, pi] = (lp - lm) / (2 * step)
    sky_grad = np.zeros(3)
    for ci in range(3):
        sp = SkyModel(sky.color)
        sp.color = sky.color.copy()   # bypass the [0,1] clamp of __post_init__
        sp.color[ci] += step
        sm = SkyModel(sky.color)
        sm.color = sky.color.copy()
        sm.color[ci] -= step
        sky_grad[ci] = (loss_fn(cloud, sp) - loss_fn(cloud, sm)) / (2 * step)

    k = sh_coeff_count(cloud.degree)
    grad.mu = flat_grad[:, 0:3]
    grad.q = flat_grad[:, 3:7]
    grad.s_log = flat_grad[:, 7:10]
    grad.o_logit = flat_grad[:, 10]
    grad.sh = flat_grad[:, 11:].reshape(len(cloud), k, 3)
    grad.sky = sky_grad
    return grad
