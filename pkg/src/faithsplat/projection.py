"""Perspective projection of 3D Gaussians and the per-view Jacobians mapping
screen-space quantities back to Gaussian parameters.

Projection follows the local-affine (EWA) approximation: the 3D covariance is
pushed through the Jacobian of the pinhole projection evaluated at the
Gaussian center, then dilated by +0.3 px^2 on the diagonal, which keeps the
2D covariance invertible (det >= 0.09) no matter how degenerate the 3D
covariance is. Cameras look along +z; splats with center depth <= ZNEAR or
whose 3-sigma bounding box misses the image are culled.

The Jacobian tensor ``B`` maps the 11 per-Gaussian geometry parameters
(canonical mu, raw quaternion, log scales, opacity logit) to the 7 screen
quantities the blending kernels differentiate against:

    rows: mean_u, mean_v, conic_a, conic_b, conic_c, opacity_logit, view_z

View-dependent color contributes two extra couplings handled alongside B:
the SH basis (for coefficient gradients) and the derivative of the clamped
color w.r.t. the world position through the view direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import (
    SH_C0,
    SH_C1,
    SH_C2,
    Camera,
    GaussianCloud,
    quat_left_matrix,
    quat_to_rotmat,
)

ZNEAR = 1e-2
DILATION = 0.3
BBOX_MARGIN = 1  # pixels; the sigma test inside the kernels is authoritative


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sh_basis(dirs: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """SH basis values and their derivatives w.r.t. the unit direction.

    Returns (basis (M, K), dbasis (M, K, 3))."""
    m = dirs.shape[0]
    k = (degree + 1) ** 2
    basis = np.zeros((m, k))
    dbasis = np.zeros((m, k, 3))
    basis[:, 0] = SH_C0
    if degree >= 1:
        x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        basis[:, 1] = -SH_C1 * y
        basis[:, 2] = SH_C1 * z
        basis[:, 3] = -SH_C1 * x
        dbasis[:, 1, 1] = -SH_C1
        dbasis[:, 2, 2] = SH_C1
        dbasis[:, 3, 0] = -SH_C1
    if degree >= 2:
        x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        c0, c1, c2, c3, c4 = SH_C2
        basis[:, 4] = c0 * x * y
        basis[:, 5] = c1 * y * z
        basis[:, 6] = c2 * (2 * z * z - x * x - y * y)
        basis[:, 7] = c3 * x * z
        basis[:, 8] = c4 * (x * x - y * y)
        dbasis[:, 4] = c0 * np.stack([y, x, np.zeros(m)], 1)
        dbasis[:, 5] = c1 * np.stack([np.zeros(m), z, y], 1)
        dbasis[:, 6] = c2 * np.stack([-2 * x, -2 * y, 4 * z], 1)
        dbasis[:, 7] = c3 * np.stack([z, np.zeros(m), x], 1)
        dbasis[:, 8] = c4 * np.stack([2 * x, -2 * y, np.zeros(m)], 1)
    return basis, dbasis


@dataclass
class ProjectedView:
    """Depth-sorted visible splats of one view plus the intermediates the
    gradient paths reuse. ``idx`` maps each row back to the cloud."""

    idx: np.ndarray          # (M,) int64
    means2d: np.ndarray      # (M, 2)
    cov2d: np.ndarray        # (M, 2, 2) dilated
    conics: np.ndarray       # (M, 3) packed inverse covariance (a, b, c)
    alphas: np.ndarray       # (M,) activated opacities
    colors: np.ndarray       # (M, 3) clamped view-dependent colors
    zs: np.ndarray           # (M,) view depths
    bboxes: np.ndarray       # (M, 4) int32 [x0, x1, y0, y1)
    # intermediates
    p_cam: np.ndarray        # (M, 3)
    jac: np.ndarray          # (M, 2, 3) pinhole Jacobian at the center
    mmat: np.ndarray         # (M, 2, 3) jac @ R_cam
    sigma3: np.ndarray       # (M, 3, 3)
    rot_q: np.ndarray        # (M, 3, 3) rotation of the normalized quaternion
    q_norm: np.ndarray       # (M,) raw quaternion norms
    q_unit: np.ndarray       # (M, 4)
    s_act: np.ndarray        # (M, 3)
    basis: np.ndarray        # (M, K)
    dbasis: np.ndarray       # (M, K, 3)
    gates: np.ndarray        # (M, 3) 1 where the raw color is strictly inside (0, 1)
    dirs: np.ndarray         # (M, 3) unit view directions
    dir_len: np.ndarray      # (M,)

    def __len__(self) -> int:
        return self.idx.shape[0]


def project_view(world: GaussianCloud, cam: Camera) -> ProjectedView:
    """Project a world-space cloud into one camera."""
    n = len(world)
    r_cam = cam.R
    p_cam = world.mu @ r_cam.T + cam.t
    in_front = p_cam[:, 2] > ZNEAR

    idx = np.nonzero(in_front)[0]
    p = p_cam[idx]
    z = p[:, 2]

    u = cam.fx * p[:, 0] / z + cam.cx
    v = cam.fy * p[:, 1] / z + cam.cy

    inv_z = 1.0 / z
    m = idx.shape[0]
    jac = np.zeros((m, 2, 3))
    jac[:, 0, 0] = cam.fx * inv_z
    jac[:, 0, 2] = -cam.fx * p[:, 0] * inv_z ** 2
    jac[:, 1, 1] = cam.fy * inv_z
    jac[:, 1, 2] = -cam.fy * p[:, 1] * inv_z ** 2

    q_raw = world.q[idx]
    q_norm = np.linalg.norm(q_raw, axis=1)
    q_unit = q_raw / q_norm[:, None]
    rot_q = quat_to_rotmat(q_unit)
    s_act = np.exp(world.s_log[idx])
    sigma3 = np.einsum("nij,nj,nkj->nik", rot_q, s_act ** 2, rot_q)

    mmat = jac @ r_cam
    cov2d = np.einsum("nij,njk,nlk->nil", mmat, sigma3, mmat)
    cov2d[:, 0, 0] += DILATION
    cov2d[:, 1, 1] += DILATION

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=1)

    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = 3.0 * np.sqrt(lam_max)

    x0 = np.clip(np.floor(u - radius - 0.5) - BBOX_MARGIN, 0, cam.width).astype(np.int32)
    x1 = np.clip(np.ceil(u + radius + 0.5) + BBOX_MARGIN, 0, cam.width).astype(np.int32)
    y0 = np.clip(np.floor(v - radius - 0.5) - BBOX_MARGIN, 0, cam.height).astype(np.int32)
    y1 = np.clip(np.ceil(v + radius + 0.5) + BBOX_MARGIN, 0, cam.height).astype(np.int32)
    on_image = (x0 < x1) & (y0 < y1)

    cam_center = cam.center
    raw_dirs = world.mu[idx] - cam_center
    dir_len = np.linalg.norm(raw_dirs, axis=1)
    dir_len = np.maximum(dir_len, 1e-12)
    dirs = raw_dirs / dir_len[:, None]
    basis, dbasis = sh_basis(dirs, world.degree)
    raw_color = 0.5 + np.einsum("mk,mkc->mc", basis, world.sh[idx])
    colors = np.clip(raw_color, 0.0, 1.0)
    gates = ((raw_color > 0.0) & (raw_color < 1.0)).astype(float)

    alphas = sigmoid(world.o_logit[idx])

    keep = np.nonzero(on_image)[0]
    order = keep[np.argsort(z[keep], kind="stable")]

    return ProjectedView(
        idx=idx[order],
        means2d=np.ascontiguousarray(np.stack([u, v], 1)[order]),
        cov2d=cov2d[order],
        conics=np.ascontiguousarray(conics[order]),
        alphas=np.ascontiguousarray(alphas[order]),
        colors=np.ascontiguousarray(colors[order]),
        zs=np.ascontiguousarray(z[order]),
        bboxes=np.ascontiguousarray(np.stack([x0, x1, y0, y1], 1)[order]),
        p_cam=p[order],
        jac=jac[order],
        mmat=mmat[order],
        sigma3=sigma3[order],
        rot_q=rot_q[order],
        q_norm=q_norm[order],
        q_unit=q_unit[order],
        s_act=s_act[order],
        basis=basis[order],
        dbasis=dbasis[order],
        gates=gates[order],
        dirs=dirs[order],
        dir_len=dir_len[order],
    )


def _drot_dquat(q_unit: np.ndarray) -> np.ndarray:
    """d rotation matrix / d normalized quaternion, shape (M, 4, 3, 3)."""
    w, x, y, z = q_unit[:, 0], q_unit[:, 1], q_unit[:, 2], q_unit[:, 3]
    m = q_unit.shape[0]
    o = np.zeros(m)
    d = np.empty((m, 4, 3, 3))
    d[:, 0] = 2 * np.stack([
        np.stack([o, -z, y], 1),
        np.stack([z, o, -x], 1),
        np.stack([-y, x, o], 1),
    ], 1)
    d[:, 1] = 2 * np.stack([
        np.stack([o, y, z], 1),
        np.stack([y, -2 * x, -w], 1),
        np.stack([z, w, -2 * x], 1),
    ], 1)
    d[:, 2] = 2 * np.stack([
        np.stack([-2 * y, x, w], 1),
        np.stack([x, o, z], 1),
        np.stack([-w, z, -2 * y], 1),
    ], 1)
    d[:, 3] = 2 * np.stack([
        np.stack([-2 * z, -w, x], 1),
        np.stack([w, -2 * z, y], 1),
        np.stack([x, y, o], 1),
    ], 1)
    return d


@dataclass
class ViewJacobians:
    """Per-splat linearization of the projection, aligned with a
    ProjectedView's rows."""

    b_tensor: np.ndarray   # (M, 7, 11)
    d_color_mu: np.ndarray  # (M, 3, 3) d clamped color / d canonical mu


def view_jacobians(
    pv: ProjectedView,
    world: GaussianCloud,
    cam: Camera,
    rot_v: np.ndarray | None = None,
    rq_v: np.ndarray | None = None,
) -> ViewJacobians:
    """Build B and the color-position coupling for the splats in ``pv``.

    ``rot_v`` / ``rq_v`` are the per-Gaussian rigid poses (cloud indexing)
    from ``per_gaussian_pose``; None means all-background."""
    m = len(pv)
    if rot_v is None:
        rv = np.broadcast_to(np.eye(3), (m, 3, 3))
        lv = np.broadcast_to(np.eye(4), (m, 4, 4))
    else:
        rv = rot_v[pv.idx]
        lv = np.stack([quat_left_matrix(r) for r in rq_v[pv.idx]])

    r_cam = cam.R
    e_mat = np.einsum("ij,njk->nik", r_cam, rv)  # d p_cam / d canonical mu

    b = np.zeros((m, 7, 11))
    if m == 0:
        return ViewJacobians(b, np.zeros((m, 3, 3)))

    # screen mean and depth rows
    b[:, 0:2, 0:3] = np.einsum("nij,njk->nik", pv.jac, e_mat)
    b[:, 6, 0:3] = e_mat[:, 2, :]
    # opacity logit passes straight through
    b[:, 5, 10] = 1.0

    # d cov2d / d p_cam via the Jacobian's dependence on the center
    fx, fy = cam.fx, cam.fy
    px, py, pz = pv.p_cam[:, 0], pv.p_cam[:, 1], pv.p_cam[:, 2]
    inv_z2 = 1.0 / pz ** 2
    inv_z3 = inv_z2 / pz
    djac = np.zeros((m, 3, 2, 3))
    djac[:, 0, 0, 2] = -fx * inv_z2
    djac[:, 1, 1, 2] = -fy * inv_z2
    djac[:, 2, 0, 0] = -fx * inv_z2
    djac[:, 2, 0, 2] = 2 * fx * px * inv_z3
    djac[:, 2, 1, 1] = -fy * inv_z2
    djac[:, 2, 1, 2] = 2 * fy * py * inv_z3

    t1 = np.einsum("nij,nkj->nik", pv.sigma3, pv.mmat)       # (M, 3, 2)
    rt1 = np.einsum("ij,njk->nik", r_cam, t1)                # (M, 3, 2)
    half = np.einsum("nkij,njl->nkil", djac, rt1)            # (M, 3, 2, 2)
    dcov_dp = half + np.swapaxes(half, -1, -2)
    dcov_mu = np.einsum("nkab,nki->niab", dcov_dp, e_mat)    # (M, 3, 2, 2)

    # d cov2d / d raw quaternion through normalization and rigid composition
    dq_rot = _drot_dquat(pv.q_unit)                          # (M, 4, 3, 3)
    s_sq = pv.s_act ** 2
    gd = dq_rot * s_sq[:, None, None, :]                     # G_m diag(s^2)
    term = np.einsum("nmab,ncb->nmac", gd, pv.rot_q)
    dsig_qn = term + np.swapaxes(term, -1, -2)               # (M, 4, 3, 3)
    eye4 = np.eye(4)
    dqn_dqw = (eye4[None] - pv.q_unit[:, :, None] * pv.q_unit[:, None, :]) \
        / pv.q_norm[:, None, None]
    dqn_dqbar = np.einsum("nij,njk->nik", dqn_dqw, lv)       # (M, 4, 4)
    dsig_q = np.einsum("nmab,nmj->njab", dsig_qn, dqn_dqbar)
    dcov_q = np.einsum("nia,njab,nkb->njik", pv.mmat, dsig_q, pv.mmat)

    # d cov2d / d log scales
    mq = np.einsum("nij,njk->nik", pv.mmat, pv.rot_q)        # (M, 2, 3)
    dcov_s = 2.0 * s_sq[:, :, None, None] * np.einsum("nai,nbi->niab", mq, mq)

    dcov = np.zeros((m, 11, 2, 2))
    dcov[:, 0:3] = dcov_mu
    dcov[:, 3:7] = dcov_q
    dcov[:, 7:10] = dcov_s

    amat = np.empty((m, 2, 2))
    amat[:, 0, 0] = pv.conics[:, 0]
    amat[:, 0, 1] = pv.conics[:, 1]
    amat[:, 1, 0] = pv.conics[:, 1]
    amat[:, 1, 1] = pv.conics[:, 2]
    dconic = -np.einsum("nab,njbc,ncd->njad", amat, dcov, amat)
    b[:, 2, :] = dconic[:, :, 0, 0]
    b[:, 3, :] = dconic[:, :, 0, 1]
    b[:, 4, :] = dconic[:, :, 1, 1]

    # clamped color w.r.t. canonical position through the view direction
    sh = world.sh[pv.idx]                                    # (M, K, 3)
    v_ch = np.einsum("njc,njd->ncd", sh, pv.dbasis)          # (M, 3, 3)
    ddir = (np.eye(3)[None] - pv.dirs[:, :, None] * pv.dirs[:, None, :]) \
        / pv.dir_len[:, None, None]
    d_color_mu = pv.gates[:, :, None] * np.einsum(
        "ncd,nde,nei->nci", v_ch, ddir, rv
    )
    return ViewJacobians(b, d_color_mu)
