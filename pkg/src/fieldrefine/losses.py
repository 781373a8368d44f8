"""Hybrid registration loss with analytic gradients w.r.t. the displacement field.

    total = lambda_ncc * ncc + lambda_ssim * ssim + lambda_smooth * smooth

Image terms are differentiated with respect to the warped image first and
then pushed through the trilinear sampler:
``dL/du_c(x) = dL/dW(x) * dW(x)/du_c(x)``, because each warped voxel depends
only on the displacement stored at that voxel.

Windowed statistics use zero-padded centred box sums.  With a symmetric
kernel that operator is self-adjoint, so the same routine serves the forward
statistics and the gradient scatter.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import InputError
from .volume import DisplacementField, Volume, check_same_dims
from .warp import sample_points, warp_with_grad

NCC_EPS = 1e-5


@dataclass(frozen=True)
class LossWeights:
    lambda_ncc: float = 1.0
    lambda_ssim: float = 2.0
    lambda_smooth: float = 1.0

    def __post_init__(self):
        for name in ("lambda_ncc", "lambda_ssim", "lambda_smooth"):
            w = getattr(self, name)
            if not (np.isfinite(w) and w >= 0):
                raise InputError(f"{name} must be finite and >= 0, got {w}")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    ncc: float
    ssim: float
    smooth: float

    def as_dict(self) -> dict:
        return {"total": self.total, "ncc": self.ncc, "ssim": self.ssim, "smooth": self.smooth}


@dataclass(frozen=True)
class SsimConstants:
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


@dataclass(frozen=True)
class LossOptions:
    ncc_window: int = 9
    ssim_window: int = 7
    ssim_constants: SsimConstants = dc_field(default_factory=SsimConstants)


@lru_cache(maxsize=64)
def _box_index(n: int, w: int):
    r = w // 2
    i = np.arange(n)
    return np.minimum(i + r + 1, n), np.maximum(i - r, 0)


def box_sum(a: np.ndarray, w: int) -> np.ndarray:
    """Zero-padded centred box sum of odd width ``w`` along the first 3 axes.

    Trailing axes (e.g. a stack of statistics) are carried along unchanged.
    """
    out = np.asarray(a, dtype=np.float64)
    for axis in range(3):
        n = out.shape[axis]
        shape = list(out.shape)
        shape[axis] = n + 1
        c = np.zeros(shape)
        head = [slice(None)] * out.ndim
        head[axis] = slice(1, None)
        np.cumsum(out, axis=axis, out=c[tuple(head)])
        hi, lo = _box_index(n, w)
        out = np.take(c, hi, axis=axis) - np.take(c, lo, axis=axis)
    return out


@lru_cache(maxsize=16)
def _window_count(shape, w: int) -> np.ndarray:
    counts = [box_sum(np.ones((n, 1, 1)), w)[:, 0, 0] for n in shape]
    out = counts[0][:, None, None] * counts[1][None, :, None] * counts[2][None, None, :]
    out.setflags(write=False)
    return out


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def _check_window(window: int, dims, name: str) -> None:
    if not isinstance(window, (int, np.integer)) or window < 3 or window % 2 == 0:
        raise InputError(f"{name} must be an odd integer >= 3, got {window!r}")
    if window > min(dims):
        raise InputError(f"{name} {window} exceeds the smallest grid axis {min(dims)}")


# ----------------------------------------------------------------------------
# image-space terms: value and derivative with respect to the warped image


def ncc_image(fixed: np.ndarray, warped: np.ndarray, window: int, with_grad: bool = True):
    """Squared local NCC loss ``1 - mean(cc)`` and ``dloss/dwarped``.

    Windows are truncated at the grid border; each window's statistics use
    its own voxel count.  ``warped`` may carry trailing batch axes (value
    only); the loss is then an array over the batch.
    """
    extra = (None,) * (warped.ndim - 3)
    I, J = np.broadcast_arrays(warped, fixed[(...,) + extra])
    count = _window_count(I.shape[:3], window)[(...,) + extra]
    sums = box_sum(np.stack([I, J, I * I, J * J, I * J], axis=-1), window)
    s_i, s_j, s_ii, s_jj, s_ij = (sums[..., k] for k in range(5))
    cross = s_ij - s_i * s_j / count
    var_i = s_ii - s_i * s_i / count
    var_j = s_jj - s_j * s_j / count
    denom = var_i * var_j + NCC_EPS
    cc = cross * cross / denom
    loss = 1.0 - np.mean(cc, axis=(0, 1, 2))
    if not with_grad:
        return _scalar(loss), None
    a = 2.0 * cross / denom
    b = -2.0 * cross * cross * var_j / (denom * denom)
    e = -(a * s_j + b * s_i) / count
    spread = box_sum(np.stack([a, b, e], axis=-1), window)
    grad = -(J * spread[..., 0] + I * spread[..., 1] + spread[..., 2]) / I.size
    return float(loss), grad


def _valid_mask(shape, window: int) -> np.ndarray:
    r = window // 2
    mask = np.zeros(shape, dtype=bool)
    mask[r:shape[0] - r, r:shape[1] - r, r:shape[2] - r] = True
    return mask


def ssim_image(fixed: np.ndarray, warped: np.ndarray, window: int, c: SsimConstants, with_grad: bool = True):
    """``1 - mean SSIM`` over windows lying fully inside the grid.

    Window statistics are plain averages (population variance).
    """
    x, y = fixed[(...,) + (None,) * (warped.ndim - 3)], warped
    n = float(window ** 3)
    mask = _valid_mask(y.shape[:3], window)
    x, _ = np.broadcast_arrays(x, y)
    sums = box_sum(np.stack([x, y, x * x, y * y, x * y], axis=-1), window)[mask] / n
    mu_x, mu_y = sums[..., 0], sums[..., 1]
    var_x = sums[..., 2] - mu_x * mu_x
    var_y = sums[..., 3] - mu_y * mu_y
    cov = sums[..., 4] - mu_x * mu_y
    c1, c2 = c.c1, c.c2
    a1 = 2.0 * mu_x * mu_y + c1
    a2 = 2.0 * cov + c2
    b1 = mu_x * mu_x + mu_y * mu_y + c1
    b2 = var_x + var_y + c2
    s = (a1 * a2) / (b1 * b2)
    loss = 1.0 - np.mean(s, axis=0)
    if not with_grad:
        return _scalar(loss), None
    beta = s / a2
    gamma = -s / b2
    alpha = s * (mu_x / a1 - mu_y / b1) - beta * mu_x - gamma * mu_y

    coeffs = np.zeros(x.shape + (3,))
    coeffs[mask] = np.stack([alpha, beta, gamma], axis=-1)
    spread = box_sum(coeffs, window)
    scale = -2.0 / (n * s.size)
    grad = scale * (spread[..., 0] + x * spread[..., 1] + y * spread[..., 2])
    return float(loss), grad


def _chain(image_grad: np.ndarray, dwarp_du: np.ndarray) -> np.ndarray:
    return image_grad[..., None] * dwarp_du


# ----------------------------------------------------------------------------
# field-space terms


def ncc_loss_grad(fixed: Volume, moving: Volume, field: DisplacementField, window: int = 9):
    check_same_dims(fixed, moving, field)
    _check_window(window, fixed.dims, "ncc window")
    warped, dw = warp_with_grad(moving, field)
    loss, g = ncc_image(fixed.data, warped, window)
    return loss, _chain(g, dw)


def ssim_loss_grad(fixed: Volume, moving: Volume, field: DisplacementField, window: int = 7,
                   c: Optional[SsimConstants] = None):
    check_same_dims(fixed, moving, field)
    _check_window(window, fixed.dims, "ssim window")
    warped, dw = warp_with_grad(moving, field)
    loss, g = ssim_image(fixed.data, warped, window, c or SsimConstants())
    return loss, _chain(g, dw)


def smooth_value_grad(u: np.ndarray, with_grad: bool = True):
    """Forward-difference diffusion penalty, normalised by ``voxels * 3 * 3``.

    ``u`` has shape ``(nx, ny, nz, 3)``, optionally followed by batch axes.
    """
    denom = float(u.shape[0] * u.shape[1] * u.shape[2] * 9)
    total = 0.0
    grad = np.zeros(u.shape) if with_grad else None
    for axis in range(3):
        diff = np.diff(u, axis=axis)
        total = total + np.sum(diff * diff, axis=(0, 1, 2, 3))
        if with_grad:
            upper = [slice(None)] * 4
            lower = [slice(None)] * 4
            upper[axis] = slice(1, None)
            lower[axis] = slice(None, -1)
            grad[tuple(upper)] += 2.0 * diff
            grad[tuple(lower)] -= 2.0 * diff
    if with_grad:
        grad /= denom
        return float(total) / denom, grad
    return _scalar(total / denom), None


def smooth_loss_grad(field: DisplacementField):
    if min(field.dims) < 2:
        raise InputError(f"smoothness term needs at least 2 voxels per axis, got {field.dims}")
    return smooth_value_grad(field.data)


def hybrid_loss_grad(fixed: Volume, moving: Volume, field: DisplacementField,
                     w: Optional[LossWeights] = None, opts: Optional[LossOptions] = None,
                     with_grad: bool = True):
    """Weighted loss and its gradient.

    Terms with zero weight are skipped and reported as 0.0.  The warp is
    evaluated once and shared by both image terms.
    """
    w = w or LossWeights()
    opts = opts or LossOptions()
    check_same_dims(fixed, moving, field)
    if w.lambda_ncc > 0:
        _check_window(opts.ncc_window, fixed.dims, "ncc window")
    if w.lambda_ssim > 0:
        _check_window(opts.ssim_window, fixed.dims, "ssim window")
    if w.lambda_smooth > 0 and min(field.dims) < 2:
        raise InputError(f"smoothness term needs at least 2 voxels per axis, got {field.dims}")

    ncc = ssim = smooth = 0.0
    grad = np.zeros(field.data.shape) if with_grad else None
    need_image = w.lambda_ncc > 0 or w.lambda_ssim > 0
    if need_image:
        warped, dw = warp_with_grad(moving, field, with_grad=with_grad)
        image_grad = np.zeros(warped.shape) if with_grad else None
        if w.lambda_ncc > 0:
            ncc, g = ncc_image(fixed.data, warped, opts.ncc_window, with_grad)
            if with_grad:
                image_grad += w.lambda_ncc * g
        if w.lambda_ssim > 0:
            ssim, g = ssim_image(fixed.data, warped, opts.ssim_window, opts.ssim_constants, with_grad)
            if with_grad:
                image_grad += w.lambda_ssim * g
        if with_grad:
            grad += _chain(image_grad, dw)
    if w.lambda_smooth > 0:
        smooth, g = smooth_value_grad(field.data, with_grad)
        if with_grad:
            grad += w.lambda_smooth * g

    total = w.lambda_ncc * ncc + w.lambda_ssim * ssim + w.lambda_smooth * smooth
    return LossBreakdown(total, ncc, ssim, smooth), grad


def finite_diff_grad(fixed: Volume, moving: Volume, field: DisplacementField,
                     w: Optional[LossWeights] = None, step: float = 1e-3,
                     opts: Optional[LossOptions] = None, batch: int = 96) -> np.ndarray:
    """Central-difference gradient of the hybrid total.  Intended for small grids.

    Perturbed copies of the field are evaluated ``batch`` at a time through
    the value-only path; each entry is an ordinary two-sided difference of the
    full loss.
    """
    w = w or LossWeights()
    opts = opts or LossOptions()
    check_same_dims(fixed, moving, field)
    u = field.data
    shape = u.shape
    grid = np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape[:3]], indexing="ij"), axis=-1)

    def totals(batch_u):
        # batch_u: (nx, ny, nz, 3, B)
        out = np.zeros(batch_u.shape[-1])
        if w.lambda_ncc > 0 or w.lambda_ssim > 0:
            pts = np.moveaxis(grid[..., None] + batch_u, 3, -1)
            warped, _ = sample_points(moving.data, pts)
            if w.lambda_ncc > 0:
                out += w.lambda_ncc * ncc_image(fixed.data, warped, opts.ncc_window, False)[0]
            if w.lambda_ssim > 0:
                out += w.lambda_ssim * ssim_image(fixed.data, warped, opts.ssim_window,
                                                  opts.ssim_constants, False)[0]
        if w.lambda_smooth > 0:
            out += w.lambda_smooth * smooth_value_grad(batch_u, False)[0]
        return out

    flat_grad = np.zeros(u.size)
    for start in range(0, u.size, batch):
        idx = np.arange(start, min(start + batch, u.size))
        cols = np.arange(idx.size)
        coords = np.unravel_index(idx, shape)
        base = np.repeat(u[..., None], idx.size, axis=-1)
        base[coords + (cols,)] += step
        plus = totals(base)
        base[coords + (cols,)] -= 2.0 * step
        minus = totals(base)
        flat_grad[idx] = (plus - minus) / (2.0 * step)
    return flat_grad.reshape(shape)
