"""Training objectives: L1, single-scale SSIM, sparse-depth supervision, and
the composite original-trajectory / gain-weighted novel-trajectory losses.

SSIM uses an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2 on
unit dynamic range, channel-averaged. Windowed moments are zero-padded and
renormalized by the in-frame window mass, so border statistics stay unbiased
while the interior matches the textbook formula exactly; the analytic
gradient is the exact adjoint of that definition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import BadArgumentError, ShapeMismatchError
from .fisher import EigMap

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class LossWeights:
    """lambda_r mixes L1 against SSIM on the image term; lambda_d weights the
    sparse-depth term."""

    lambda_r: float = 0.8
    lambda_d: float = 0.05

    def __post_init__(self):
        if not (0.0 <= self.lambda_r <= 1.0):
            raise BadArgumentError(f"lambda_r must lie in [0, 1], got {self.lambda_r}")
        if self.lambda_d < 0:
            raise BadArgumentError(f"lambda_d must be >= 0, got {self.lambda_d}")


@dataclass
class SparseDepth:
    """Sparse depth samples at integer pixel positions."""

    rows: np.ndarray    # (S,) int
    cols: np.ndarray    # (S,) int
    depth: np.ndarray   # (S,) > 0
    valid: np.ndarray   # (S,) bool

    def __post_init__(self):
        self.rows = np.asarray(self.rows, int)
        self.cols = np.asarray(self.cols, int)
        self.depth = np.asarray(self.depth, float)
        self.valid = np.asarray(self.valid, bool)
        if (self.depth[self.valid] <= 0).any():
            raise BadArgumentError("sparse depth values must be positive")

    def __len__(self) -> int:
        return self.rows.shape[0]

    @staticmethod
    def empty() -> "SparseDepth":
        z = np.zeros(0)
        return SparseDepth(z, z, z, z.astype(bool))


@dataclass
class LossResult:
    value: float
    g_color: np.ndarray          # d value / d rendered color image
    g_depth: np.ndarray | None   # d value / d rendered depth image
    parts: dict


def l1_loss(rendered: np.ndarray, target: np.ndarray):
    """Mean absolute error over pixels and channels. The subgradient at
    exact zero difference is zero."""
    if rendered.shape != target.shape:
        raise ShapeMismatchError(
            f"image shapes differ: {rendered.shape} vs {target.shape}"
        )
    diff = rendered - target
    value = float(np.abs(diff).mean())
    grad = np.sign(diff) / diff.size
    return value, grad


def _gauss_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=float)
    w = np.exp(-(x ** 2) / (2 * SSIM_SIGMA ** 2))
    return w / w.sum()


_WIN1D = _gauss_window()


def _conv0(img: np.ndarray) -> np.ndarray:
    """Zero-padded same-size separable window convolution over the two
    leading axes. Self-adjoint because the window is symmetric."""
    out = correlate1d(img, _WIN1D, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _WIN1D, axis=1, mode="constant", cval=0.0)


def _window_mass(shape: tuple[int, int]) -> np.ndarray:
    return _conv0(np.ones(shape))


def _check_ssim_shapes(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise BadArgumentError(
            f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM, "
            f"got {a.shape[:2]}"
        )


def _ssim_stats(x: np.ndarray, y: np.ndarray):
    """Renormalized windowed moments of x against y (per channel).

    Returns (mass, mx, my, mxx, myy, mxy) where each moment already carries
    the 1/mass renormalization."""
    mass = _window_mass(x.shape[:2])
    if x.ndim == 3:
        mass = mass[:, :, None]
    mx = _conv0(x) / mass
    my = _conv0(y) / mass
    mxx = _conv0(x * x) / mass
    myy = _conv0(y * y) / mass
    mxy = _conv0(x * y) / mass
    return mass, mx, my, mxx, myy, mxy


def ssim_map(rendered: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-pixel (and per-channel, if 3D) structural similarity map."""
    _check_ssim_shapes(rendered, target)
    _, mx, my, mxx, myy, mxy = _ssim_stats(rendered, target)
    sx = mxx - mx * mx
    sy = myy - my * my
    sxy = mxy - mx * my
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * sxy + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = sx + sy + SSIM_C2
    return (a1 * a2) / (b1 * b2)


def ssim(rendered: np.ndarray, target: np.ndarray):
    """Mean SSIM and its gradient w.r.t. ``rendered``. The loss form used by
    the composites is (1 - ssim) with the negated gradient."""
    smap = ssim_map(rendered, target)
    value = float(smap.mean())
    upstream = np.full(smap.shape, 1.0 / smap.size)
    grad = ssim_map_backward(rendered, target, upstream)
    return value, grad


def ssim_map_backward(
    rendered: np.ndarray, target: np.ndarray, upstream: np.ndarray
) -> np.ndarray:
    """Adjoint of ssim_map: given dLoss/dSSIMmap, return dLoss/drendered.

    Derivatives are taken w.r.t. the raw windowed moments (mx, mxx, mxy) and
    pulled back through the renormalized zero-padded convolution, whose
    adjoint is the same convolution applied to upstream / mass.
    """
    _check_ssim_shapes(rendered, target)
    mass, mx, my, mxx, myy, mxy = _ssim_stats(rendered, target)
    sy = myy - my * my
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * (mxy - mx * my) + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = (mxx - mx * mx) + sy + SSIM_C2
    denom = (b1 * b2) ** 2

    d_mx = (2 * my * (a2 - a1) * b1 * b2 - 2 * mx * a1 * a2 * (b2 - b1)) / denom
    d_mxx = -(a1 * a2) * b1 / denom
    d_mxy = 2 * a1 / (b1 * b2)

    u1 = _conv0(upstream * d_mx / mass)
    u2 = _conv0(upstream * d_mxx / mass)
    u3 = _conv0(upstream * d_mxy / mass)
    return u1 + 2 * rendered * u2 + target * u3


def ssim_penalty_map(rendered: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Channel-averaged per-pixel (1 - SSIM); the map the gain weighting
    multiplies before spatial averaging."""
    smap = ssim_map(rendered, target)
    if smap.ndim == 3:
        smap = smap.mean(axis=2)
    return 1.0 - smap


def depth_loss(depth_image: np.ndarray, sparse: SparseDepth,
               opacity: np.ndarray | None = None):
    """Mean absolute depth error over valid samples whose rendered opacity is
    at least 0.5. The opacity gate is treated as a constant mask. An empty
    usable set gives loss 0."""
    h, w = depth_image.shape
    grad = np.zeros_like(depth_image)
    if len(sparse) == 0:
        return 0.0, grad
    if ((sparse.rows < 0) | (sparse.rows >= h)
            | (sparse.cols < 0) | (sparse.cols >= w)).any():
        raise BadArgumentError("sparse depth sample out of image bounds")
    use = sparse.valid.copy()
    if opacity is not None:
        use &= opacity[sparse.rows, sparse.cols] >= 0.5
    if not use.any():
        return 0.0, grad
    r, c = sparse.rows[use], sparse.cols[use]
    diff = depth_image[r, c] - sparse.depth[use]
    value = float(np.abs(diff).mean())
    np.add.at(grad, (r, c), np.sign(diff) / diff.size)
    return value, grad


def loss_original(render_out, target_image: np.ndarray, sparse: SparseDepth,
                  weights: LossWeights) -> LossResult:
    """lambda_r L1 + (1 - lambda_r)(1 - SSIM) + lambda_d depth."""
    l1_val, l1_grad = l1_loss(render_out.color, target_image)
    ssim_val, ssim_grad = ssim(render_out.color, target_image)
    d_val, d_grad = depth_loss(render_out.depth, sparse, render_out.opacity)
    lr, ld = weights.lambda_r, weights.lambda_d
    value = lr * l1_val + (1 - lr) * (1 - ssim_val) + ld * d_val
    g_color = lr * l1_grad - (1 - lr) * ssim_grad
    g_depth = ld * d_grad
    return LossResult(
        value=value, g_color=g_color, g_depth=g_depth,
        parts={"l1": l1_val, "ssim": ssim_val, "depth": d_val},
    )


def loss_novel(render_out, restored_image: np.ndarray, eig: EigMap,
               sparse: SparseDepth, weights: LossWeights) -> LossResult:
    """Gain-weighted image term plus unweighted depth term.

    Image term: mean over pixels of weight(p) * (lambda_r * l1map(p) +
    (1 - lambda_r) * ssim_penalty(p)), where weight is the normalized EIG
    map held constant (no gradient flows into it), l1map is the channel-mean
    absolute difference, and ssim_penalty the channel-mean per-pixel
    (1 - SSIM) before spatial averaging. With a unit weight map this reduces
    exactly to the unweighted image loss of loss_original.
    """
    rendered = render_out.color
    if eig.normalized.shape != rendered.shape[:2]:
        raise ShapeMismatchError(
            f"gain map shape {eig.normalized.shape} does not match image "
            f"{rendered.shape[:2]}"
        )
    if restored_image.shape != rendered.shape:
        raise ShapeMismatchError(
            f"restored image shape {restored_image.shape} does not match "
            f"render {rendered.shape}"
        )
    lam = eig.normalized
    npix = lam.size
    lr, ld = weights.lambda_r, weights.lambda_d

    diff = rendered - restored_image
    l1_map = np.abs(diff).mean(axis=2)
    pen_map = ssim_penalty_map(rendered, restored_image)
    img_val = float((lam * (lr * l1_map + (1 - lr) * pen_map)).mean())

    g_color = lr * lam[:, :, None] * np.sign(diff) / (3 * npix)
    # SSIM penalty enters negated and channel-averaged
    upstream = np.repeat(
        (-(1 - lr) * lam / (3 * npix))[:, :, None], 3, axis=2
    )
    g_color += ssim_map_backward(rendered, restored_image, upstream)

    d_val, d_grad = depth_loss(render_out.depth, sparse, render_out.opacity)
    value = img_val + ld * d_val
    return LossResult(
        value=value, g_color=g_color, g_depth=ld * d_grad,
        parts={"image": img_val, "depth": d_val},
    )
