"""Forward rendering: projection, depth sort, tile-based alpha blending of
color / depth / arbitrary per-Gaussian scalars, and sky compositing.

Conventions (shared with the gradient path and the reference oracle):
front-to-back blending in ascending view-depth order with ties broken by
storage index, transmittance early exit below 1e-4, 3-sigma splat support,
and depth reported as the opacity-normalized blended view depth (0 where the
accumulated opacity is <= 1e-6).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ShapeMismatchError
from .projection import ProjectedView, project_view
from .scene import Camera, GaussianCloud, RigidPoseTrack, SkyModel, compose_world

OPACITY_EPS = 1e-6


@dataclass
class Splat2D:
    """One projected Gaussian in screen space."""

    source_index: int
    mean: np.ndarray       # (2,) pixels
    cov: np.ndarray        # (2, 2) pixels^2, dilated
    depth: float           # view-space z
    opacity: float         # activated


@dataclass
class RenderOutput:
    color: np.ndarray                 # (H, W, 3) in [0, 1]
    depth: np.ndarray                 # (H, W) opacity-normalized view depth
    opacity: np.ndarray               # (H, W) accumulated O_G
    contributions: list | None = None  # row-major per-pixel [(index, weight)]


def project(cloud: GaussianCloud, cam: Camera) -> list[Splat2D]:
    """Visible splats for one view, depth sorted. The cloud is taken as
    already composed into world space."""
    pv = project_view(cloud, cam)
    return [
        Splat2D(
            source_index=int(pv.idx[i]),
            mean=pv.means2d[i].copy(),
            cov=pv.cov2d[i].copy(),
            depth=float(pv.zs[i]),
            opacity=float(pv.alphas[i]),
        )
        for i in range(len(pv))
    ]


def _render_projected(
    pv: ProjectedView, sky: SkyModel, cam: Camera, collect: bool
) -> RenderOutput:
    color, opac, dsum, contrib = _kernels.forward(
        pv.means2d, pv.conics, pv.alphas, pv.colors, pv.zs,
        np.ascontiguousarray(sky.color, float),
        cam.height, cam.width, pv.bboxes, collect,
    )
    depth = np.where(opac > OPACITY_EPS, dsum / np.where(opac > OPACITY_EPS, opac, 1.0), 0.0)
    if collect and contrib is not None:
        # map kernel-local splat rows back to cloud indices
        contrib = [
            [(int(pv.idx[k]), w) for k, w in pixel] for pixel in contrib
        ]
    return RenderOutput(color=color, depth=depth, opacity=opac, contributions=contrib)


def render(
    cloud: GaussianCloud,
    tracks: list[RigidPoseTrack],
    sky: SkyModel,
    cam: Camera,
    t: int = 0,
    collect_contributions: bool = False,
) -> RenderOutput:
    """Render one view at timestamp t."""
    world = compose_world(cloud, tracks, t)
    pv = project_view(world, cam)
    return _render_projected(pv, sky, cam, collect_contributions)


def render_scalar_field(
    cloud: GaussianCloud,
    values: np.ndarray,
    cam: Camera,
    t: int = 0,
    tracks: list[RigidPoseTrack] = (),
) -> np.ndarray:
    """Blend one scalar per Gaussian with the exact render weights (same
    sort, same alphas). The sky contributes nothing."""
    values = np.asarray(values, float)
    if values.shape != (len(cloud),):
        raise ShapeMismatchError(
            f"scalar field needs {len(cloud)} values, got shape {values.shape}"
        )
    world = compose_world(cloud, list(tracks), t)
    pv = project_view(world, cam)
    return _kernels.scalar_forward(
        pv.means2d, pv.conics, pv.alphas,
        np.ascontiguousarray(values[pv.idx]),
        cam.height, cam.width, pv.bboxes,
    )


def kernel_backend() -> str:
    """Name of the blending backend selected at import (cython or python)."""
    return _kernels.BACKEND
