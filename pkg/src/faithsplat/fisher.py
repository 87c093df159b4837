"""Fisher-information ledger and pixel-wise expected information gain.

The ledger accumulates, per Gaussian, the summed squared pixel derivatives
(the Gauss-Newton diagonal under unit observation noise) over all training
views. For a novel view, the per-Gaussian gain is half the ratio of the
view's own information to the regularized prior information, and the pixel
map blends those per-Gaussian gains with the exact rendering weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadArgumentError, ShapeMismatchError
from .gradients import per_gaussian_gradsq
from .rasterizer import render, render_scalar_field
from .scene import Camera, GaussianCloud, RigidPoseTrack, SkyModel

EIG_PREFACTOR = 0.5   # the trace-bound carries a global 1/2
SKY_OPACITY_CUT = 0.05
NORM_PERCENTILE = 99.0
DEFAULT_REG_SCALE = 1e-2


@dataclass
class FisherLedger:
    """Accumulated per-Gaussian prior information over training views.

    ``reg`` is the diagonal prior that keeps the inverse finite for
    never-observed Gaussians; it is sized relative to the mean positive
    entry at finalize time. Entries only ever grow under accumulation.
    """

    h_prior: np.ndarray           # (N,) >= 0
    reg: float = 0.0
    views: int = 0
    reg_scale: float = DEFAULT_REG_SCALE
    h_prior_param: np.ndarray | None = None  # (N, P) diagnostic accumulation

    @staticmethod
    def for_cloud(cloud: GaussianCloud, per_param: bool = False,
                  reg_scale: float = DEFAULT_REG_SCALE) -> "FisherLedger":
        n = len(cloud)
        hp = np.zeros((n, cloud.param_dim)) if per_param else None
        return FisherLedger(np.zeros(n), 0.0, 0, reg_scale, hp)

    def finalize(self) -> "FisherLedger":
        """Fix the regularizer from the current entries."""
        positive = self.h_prior[self.h_prior > 0]
        base = positive.mean() if positive.size else 1.0
        self.reg = self.reg_scale * base
        if self.reg <= 0:
            self.reg = 1e-8
        return self

    def copy(self) -> "FisherLedger":
        return FisherLedger(
            self.h_prior.copy(), self.reg, self.views, self.reg_scale,
            None if self.h_prior_param is None else self.h_prior_param.copy(),
        )


@dataclass
class EigMap:
    """Per-pixel expected information gain for one novel view."""

    raw: np.ndarray          # (H, W) >= 0
    normalized: np.ndarray   # (H, W) in [0, 1]
    sky_mask: np.ndarray     # (H, W) bool, True where O_G < 0.05
    norm_scale: float        # the raw value mapped to 1.0
    percentile: float
    raw_max: float
    camera_tag: str = ""

    @property
    def shape(self):
        return self.raw.shape


@dataclass
class RegionMasks:
    """Partition of the non-sky pixels at a normalized-EIG threshold."""

    ucr: np.ndarray    # bool, under-constrained (normalized > tau)
    hpr: np.ndarray    # bool, high-confidence complement
    tau: float


def accumulate_fisher(
    ledger: FisherLedger,
    cloud: GaussianCloud,
    tracks: list[RigidPoseTrack],
    sky: SkyModel,
    train_cams: list[Camera],
) -> FisherLedger:
    """Add each view's per-Gaussian information to the ledger (in place) and
    return it. Views enter additively, so the result is order independent."""
    if ledger.h_prior.shape[0] != len(cloud):
        raise ShapeMismatchError(
            f"ledger sized for {ledger.h_prior.shape[0]} Gaussians, "
            f"cloud has {len(cloud)}"
        )
    for cam in train_cams:
        gs = per_gaussian_gradsq(cloud, tracks, sky, cam, cam.timestamp)
        ledger.h_prior += gs.per_gaussian
        if ledger.h_prior_param is not None:
            ledger.h_prior_param += gs.per_param
        ledger.views += 1
    return ledger


def per_gaussian_eig(
    ledger: FisherLedger,
    cloud: GaussianCloud,
    tracks: list[RigidPoseTrack],
    sky: SkyModel,
    novel_cam: Camera,
) -> np.ndarray:
    """Half the ratio of the novel view's information to the regularized
    prior, one value per Gaussian."""
    if ledger.reg <= 0:
        raise BadArgumentError("ledger not finalized: regularizer is unset")
    gs = per_gaussian_gradsq(cloud, tracks, sky, novel_cam, novel_cam.timestamp)
    return EIG_PREFACTOR * gs.per_gaussian / (ledger.h_prior + ledger.reg)


def per_gaussian_eig_per_param(
    ledger: FisherLedger,
    cloud: GaussianCloud,
    tracks: list[RigidPoseTrack],
    sky: SkyModel,
    novel_cam: Camera,
) -> np.ndarray:
    """Diagnostic variant dividing per parameter slot before reducing.
    Requires a ledger built with per-parameter accumulation."""
    if ledger.h_prior_param is None:
        raise BadArgumentError("ledger lacks per-parameter accumulation")
    if ledger.reg <= 0:
        raise BadArgumentError("ledger not finalized: regularizer is unset")
    gs = per_gaussian_gradsq(cloud, tracks, sky, novel_cam, novel_cam.timestamp)
    ratios = gs.per_param / (ledger.h_prior_param + ledger.reg)
    return EIG_PREFACTOR * ratios.sum(axis=1)


def eig_map(
    ledger: FisherLedger,
    cloud: GaussianCloud,
    tracks: list[RigidPoseTrack],
    sky: SkyModel,
    novel_cam: Camera,
    t: int | None = None,
    camera_tag: str = "",
) -> EigMap:
    """Pixel-wise EIG: blend the per-Gaussian gains with the render weights,
    normalize by the 99th percentile of the positive values, zero the sky."""
    if t is None:
        t = novel_cam.timestamp
    gains = per_gaussian_eig(ledger, cloud, tracks, sky, novel_cam)
    raw = render_scalar_field(cloud, gains, novel_cam, t, tracks)
    out = render(cloud, tracks, sky, novel_cam, t)
    sky_mask = out.opacity < SKY_OPACITY_CUT

    positive = raw[raw > 0]
    scale = float(np.percentile(positive, NORM_PERCENTILE)) if positive.size else 0.0
    if scale > 0:
        normalized = np.clip(raw / scale, 0.0, 1.0)
    else:
        scale = 1.0
        normalized = np.zeros_like(raw)
    normalized[sky_mask] = 0.0
    return EigMap(
        raw=raw,
        normalized=normalized,
        sky_mask=sky_mask,
        norm_scale=scale,
        percentile=NORM_PERCENTILE,
        raw_max=float(raw.max()) if raw.size else 0.0,
        camera_tag=camera_tag,
    )


def partition(eig: EigMap, tau: float) -> RegionMasks:
    """Split non-sky pixels into UCR (normalized > tau) and HPR."""
    if not (0.0 <= tau <= 1.0):
        raise BadArgumentError(f"tau must lie in [0, 1], got {tau}")
    non_sky = ~eig.sky_mask
    ucr = (eig.normalized > tau) & non_sky
    hpr = non_sky & ~ucr
    return RegionMasks(ucr=ucr, hpr=hpr, tau=tau)


@dataclass
class TraceBoundReport:
    trials: int
    max_dim: int
    min_slack: float
    max_slack: float
    holds: bool


def trace_bound_check(dim: int = 8, trials: int = 200, seed: int = 0) -> TraceBoundReport:
    """Empirical check of log det(I + A) <= tr(A) for random symmetric PSD A.

    Slack is tr(A) - log det(I + A), evaluated through an eigendecomposition
    so the check does not share code with any consumer of the bound."""
    if dim > 16:
        raise BadArgumentError("dim must be <= 16")
    rng = np.random.default_rng(seed)
    min_slack = np.inf
    max_slack = -np.inf
    for _ in range(trials):
        d = int(rng.integers(1, dim + 1))
        mat = rng.normal(size=(d, d))
        a = mat @ mat.T
        eig_vals = np.linalg.eigvalsh(a)
        eig_vals = np.maximum(eig_vals, 0.0)
        slack = eig_vals.sum() - np.log1p(eig_vals).sum()
        min_slack = min(min_slack, slack)
        max_slack = max(max_slack, slack)
    return TraceBoundReport(
        trials=trials,
        max_dim=dim,
        min_slack=float(min_slack),
        max_slack=float(max_slack),
        holds=min_slack >= -1e-9,
    )
