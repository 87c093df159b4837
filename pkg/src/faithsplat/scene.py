"""Decomposed scene representation: background Gaussians in world space, rigid
objects in canonical space with SE(3) pose tracks, and a constant sky color.

Per-Gaussian parameter layout (the documented flattening order used by the
file formats, gradients, and Fisher accumulators):

    mu (3) | q (4) | s (3, log scales) | o (1, opacity logit) | c (K*3, SH)

SH coefficients are stored coefficient-major: c[j, ch] flattens as
(j0.r, j0.g, j0.b, j1.r, ...). Opacity activates through a sigmoid, scales
through exp; quaternions are normalized wherever they are consumed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BadArgumentError, MissingPoseError, ShapeMismatchError

BACKGROUND = 0

# y = 0.2820948 * c0 + 0.5 is the usual splatting DC color convention.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)


def sh_coeff_count(degree: int) -> int:
    if degree not in (0, 1, 2):
        raise BadArgumentError(f"SH degree must be 0, 1 or 2, got {degree}")
    return (degree + 1) ** 2


@dataclass
class GaussianCloud:
    """Array-of-fields container for N Gaussians sharing one SH degree.

    ``group`` is 0 for background and a positive rigid object id otherwise.
    Treated as an immutable snapshot once handed to the renderer; the trainer
    replaces arrays between iterations rather than mutating in place.
    """

    mu: np.ndarray          # (N, 3) world (background) or canonical (rigid)
    q: np.ndarray           # (N, 4) quaternion (w, x, y, z), raw
    s_log: np.ndarray       # (N, 3) log scales
    o_logit: np.ndarray     # (N,)
    sh: np.ndarray          # (N, K, 3)
    group: np.ndarray       # (N,) int32
    degree: int = 1

    def __post_init__(self):
        n = self.mu.shape[0]
        k = sh_coeff_count(self.degree)
        if (
            self.mu.shape != (n, 3)
            or self.q.shape != (n, 4)
            or self.s_log.shape != (n, 3)
            or self.o_logit.shape != (n,)
            or self.sh.shape != (n, k, 3)
            or self.group.shape != (n,)
        ):
            raise ShapeMismatchError("inconsistent cloud field shapes")

    def __len__(self) -> int:
        return self.mu.shape[0]

    @property
    def param_dim(self) -> int:
        """Per-Gaussian parameter count: 3 + 4 + 3 + 1 + 3*K."""
        return 11 + 3 * sh_coeff_count(self.degree)

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.mu.copy(), self.q.copy(), self.s_log.copy(),
            self.o_logit.copy(), self.sh.copy(), self.group.copy(), self.degree,
        )

    @staticmethod
    def empty(degree: int = 1) -> "GaussianCloud":
        k = sh_coeff_count(degree)
        return GaussianCloud(
            np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)),
            np.zeros((0,)), np.zeros((0, k, 3)), np.zeros((0,), np.int32), degree,
        )

    @staticmethod
    def concatenate(parts: list["GaussianCloud"]) -> "GaussianCloud":
        deg = parts[0].degree
        return GaussianCloud(
            np.concatenate([p.mu for p in parts]),
            np.concatenate([p.q for p in parts]),
            np.concatenate([p.s_log for p in parts]),
            np.concatenate([p.o_logit for p in parts]),
            np.concatenate([p.sh for p in parts]),
            np.concatenate([p.group for p in parts]),
            deg,
        )

    def select(self, idx: np.ndarray) -> "GaussianCloud":
        return GaussianCloud(
            self.mu[idx], self.q[idx], self.s_log[idx],
            self.o_logit[idx], self.sh[idx], self.group[idx], self.degree,
        )


@dataclass
class RigidPoseTrack:
    """SE(3) pose per timestamp for one rigid object. R must be a proper
    rotation at every stored timestamp."""

    object_id: int
    rotations: dict[int, np.ndarray] = field(default_factory=dict)   # t -> (3,3)
    translations: dict[int, np.ndarray] = field(default_factory=dict)  # t -> (3,)

    def set_pose(self, t: int, rotation: np.ndarray, translation: np.ndarray):
        rotation = np.asarray(rotation, float)
        if not np.allclose(rotation @ rotation.T, np.eye(3), atol=1e-8):
            raise BadArgumentError(
                f"pose rotation for object {self.object_id} at t={t} is not orthonormal"
            )
        if np.linalg.det(rotation) < 0:
            raise BadArgumentError(
                f"pose rotation for object {self.object_id} at t={t} has det < 0"
            )
        self.rotations[t] = rotation
        self.translations[t] = np.asarray(translation, float).reshape(3)

    def pose_at(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        if t not in self.rotations:
            raise MissingPoseError(self.object_id, t)
        return self.rotations[t], self.translations[t]

    @property
    def timestamps(self) -> list[int]:
        return sorted(self.rotations)


@dataclass
class SkyModel:
    """Constant optimizable sky color, composited as (1 - O_G) * color."""

    color: np.ndarray = field(default_factory=lambda: np.array([0.6, 0.75, 0.92]))

    def __post_init__(self):
        self.color = np.clip(np.asarray(self.color, float).reshape(3), 0.0, 1.0)

    def clamped(self) -> "SkyModel":
        return SkyModel(np.clip(self.color, 0.0, 1.0))


@dataclass
class Camera:
    """Pinhole camera. Extrinsics map world to camera coordinates with the
    camera looking along +z (points with z_cam <= near are behind)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray                      # (3,3) world-to-camera rotation
    t: np.ndarray                      # (3,) world-to-camera translation
    timestamp: int = 0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise BadArgumentError("camera focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise BadArgumentError("camera resolution must be at least 1x1")
        self.R = np.asarray(self.R, float).reshape(3, 3)
        self.t = np.asarray(self.t, float).reshape(3)

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.R.T @ self.t

    def translated(self, world_offset: np.ndarray) -> "Camera":
        """Same orientation, camera center shifted by ``world_offset``."""
        new_center = self.center + np.asarray(world_offset, float)
        return replace(self, t=-self.R @ new_center)


@dataclass
class SceneSequence:
    """Binds a cloud to renderable frames: cameras, pose tracks, sky."""

    cameras: list[Camera]
    tracks: list[RigidPoseTrack]
    sky: SkyModel

    @property
    def timestamps(self) -> list[int]:
        return [c.timestamp for c in self.cameras]


# ---------------------------------------------------------------------------
# quaternion helpers (w, x, y, z convention, Hamilton product)

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)

def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from (..., 4) quaternions, normalized internally."""
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m

def rotmat_to_quat(m: np.ndarray) -> np.ndarray:
    """Quaternion (w, x, y, z) from a proper rotation matrix (Shepperd)."""
    m = np.asarray(m, float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array([(m[2, 1] - m[1, 2]) / s,
                      0.25 * s,
                      (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array([(m[0, 2] - m[2, 0]) / s,
                      (m[0, 1] + m[1, 0]) / s,
                      0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array([(m[1, 0] - m[0, 1]) / s,
                      (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s,
                      0.25 * s])
    return quat_normalize(q)

def quat_left_matrix(r: np.ndarray) -> np.ndarray:
    """4x4 matrix L with L @ q == r (x) q (Hamilton product)."""
    w, x, y, z = r
    return np.array([
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ])


# ---------------------------------------------------------------------------
# operations

def per_gaussian_pose(
    cloud: GaussianCloud, tracks: list[RigidPoseTrack], t: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-Gaussian rigid pose at time t: (R (N,3,3), trans (N,3), r_quat (N,4)).

    Background rows get the identity. Raises MissingPoseError if a rigid group
    id present in the cloud has no pose at t.
    """
    n = len(cloud)
    rot = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    trans = np.zeros((n, 3))
    rq = np.zeros((n, 4))
    rq[:, 0] = 1.0
    by_id = {trk.object_id: trk for trk in tracks}
    for oid in np.unique(cloud.group):
        if oid == BACKGROUND:
            continue
        trk = by_id.get(int(oid))
        if trk is None:
            raise MissingPoseError(int(oid), t)
        R, tv = trk.pose_at(t)
        mask = cloud.group == oid
        rot[mask] = R
        trans[mask] = tv
        rq[mask] = rotmat_to_quat(R)
    return rot, trans, rq


def compose_world(
    cloud: GaussianCloud, tracks: list[RigidPoseTrack], t: int
) -> GaussianCloud:
    """World-space cloud at time t. Rigid means move to R mu + t, rigid
    quaternions pick up the pose rotation on the left; everything else is
    untouched. Background rows are returned as stored."""
    if not len(cloud) or not (cloud.group != BACKGROUND).any():
        return cloud
    rot, trans, rq = per_gaussian_pose(cloud, tracks, t)
    mu = np.einsum("nij,nj->ni", rot, cloud.mu) + trans
    # q_world = r (x) q, batched via the left-multiplication matrix of r
    lw = np.stack([quat_left_matrix(r) for r in rq])
    q = np.einsum("nij,nj->ni", lw, cloud.q)
    out = cloud.copy()
    out.mu = mu
    out.q = q
    return out


def clamp_scales(cloud: GaussianCloud, max_scale: float) -> GaussianCloud:
    """Cap activated scales at max_scale (applied in log space). Idempotent
    and never increases a scale."""
    if max_scale <= 0:
        raise BadArgumentError("max_scale must be positive")
    out = cloud.copy()
    out.s_log = np.minimum(out.s_log, np.log(max_scale))
    return out


def flatten_params(cloud: GaussianCloud) -> np.ndarray:
    """(N, P) parameter matrix in the documented flattening order."""
    n = len(cloud)
    return np.concatenate(
        [cloud.mu, cloud.q, cloud.s_log, cloud.o_logit[:, None],
         cloud.sh.reshape(n, -1)],
        axis=1,
    )


def unflatten_params(cloud: GaussianCloud, params: np.ndarray) -> GaussianCloud:
    """Inverse of flatten_params; keeps group tags and degree from ``cloud``."""
    n = len(cloud)
    k = sh_coeff_count(cloud.degree)
    if params.shape != (n, cloud.param_dim):
        raise ShapeMismatchError(
            f"expected parameter matrix {(n, cloud.param_dim)}, got {params.shape}"
        )
    out = cloud.copy()
    out.mu = params[:, 0:3].copy()
    out.q = params[:, 3:7].copy()
    out.s_log = params[:, 7:10].copy()
    out.o_logit = params[:, 10].copy()
    out.sh = params[:, 11:].reshape(n, k, 3).copy()
    return out
