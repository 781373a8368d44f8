"""Pull-warping of images and labels, and Jacobian determinants.

Conventions:
  * ``warp(moving, u)[x] = moving(x + u(x))`` (backward / pull warping).
  * Coordinates are in voxel units; out-of-grid samples clamp to the edge.
  * The coordinate gradient returned with each sample is the exact derivative
    of the trilinear interpolant.  Along an axis where the coordinate lies
    outside ``[0, n - 1]`` it is zero.  At interior lattice planes the
    derivative of the cell on the upper side is used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .parallel import slab_map
from .volume import DisplacementField, LabelMap, Volume, check_same_dims


@dataclass(frozen=True)
class SampleResult:
    value: float
    coord_grad: np.ndarray


def _axis_weights(p: np.ndarray, n: int):
    """Lower index, fractional weight, and d(frac)/dp along one axis."""
    if n == 1:
        zeros = np.zeros(p.shape, dtype=np.intp)
        return zeros, np.zeros(p.shape), np.zeros(p.shape)
    inside = (p >= 0) & (p <= n - 1)
    pc = np.clip(p, 0, n - 1)
    i0 = np.minimum(np.floor(pc).astype(np.intp), n - 2)
    frac = pc - i0
    return i0, frac, inside.astype(np.float64)


def _sample(img: np.ndarray, px, py, pz, with_grad: bool):
    nx, ny, nz = img.shape
    ix, fx, dx = _axis_weights(px, nx)
    iy, fy, dy = _axis_weights(py, ny)
    iz, fz, dz = _axis_weights(pz, nz)
    # neighbours collapse onto the same index along singleton axes
    jx = np.minimum(ix + 1, nx - 1)
    jy = np.minimum(iy + 1, ny - 1)
    jz = np.minimum(iz + 1, nz - 1)

    c000 = img[ix, iy, iz]
    c100 = img[jx, iy, iz]
    c010 = img[ix, jy, iz]
    c110 = img[jx, jy, iz]
    c001 = img[ix, iy, jz]
    c101 = img[jx, iy, jz]
    c011 = img[ix, jy, jz]
    c111 = img[jx, jy, jz]

    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    # interpolate along x, then y, then z
    c00 = c000 * gx + c100 * fx
    c10 = c010 * gx + c110 * fx
    c01 = c001 * gx + c101 * fx
    c11 = c011 * gx + c111 * fx
    c0 = c00 * gy + c10 * fy
    c1 = c01 * gy + c11 * fy
    value = c0 * gz + c1 * fz
    if not with_grad:
        return value, None

    grad = np.empty(value.shape + (3,))
    d00 = c100 - c000
    d10 = c110 - c010
    d01 = c101 - c001
    d11 = c111 - c011
    grad[..., 0] = ((d00 * gy + d10 * fy) * gz + (d01 * gy + d11 * fy) * fz) * dx
    grad[..., 1] = ((c10 - c00) * gz + (c11 - c01) * fz) * dy
    grad[..., 2] = (c1 - c0) * dz
    return value, grad


def sample_trilinear(v: Volume, p) -> SampleResult:
    """Trilinear sample of ``v`` at continuous voxel coordinate ``p``."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise InputError("sample point must be a finite 3-vector")
    value, grad = _sample(v.data, p[0:1], p[1:2], p[2:3], True)
    return SampleResult(float(value[0]), grad[0].copy())


def sample_points(img: np.ndarray, points: np.ndarray, with_grad: bool = False):
    """Vectorised sampler: ``points[..., 3]`` voxel coordinates."""
    return _sample(img, points[..., 0], points[..., 1], points[..., 2], with_grad)


def warp_with_grad(moving: Volume, field: DisplacementField, with_grad: bool = True):
    """Warped image and its per-voxel derivative with respect to u.

    Returns ``(warped, dwarped_du)`` as float64 arrays; the second has shape
    ``(nx, ny, nz, 3)`` (``None`` when ``with_grad`` is false).
    """
    check_same_dims(moving, field)
    nx, ny, nz = moving.dims
    img = moving.data
    u = field.data
    warped = np.empty((nx, ny, nz))
    grad = np.empty((nx, ny, nz, 3)) if with_grad else None
    gy, gz = np.meshgrid(np.arange(ny, dtype=np.float64), np.arange(nz, dtype=np.float64), indexing="ij")

    def run(a, b):
        gx = np.arange(a, b, dtype=np.float64)[:, None, None]
        px = gx + u[a:b, :, :, 0]
        py = gy[None] + u[a:b, :, :, 1]
        pz = gz[None] + u[a:b, :, :, 2]
        val, g = _sample(img, px, py, pz, with_grad)
        warped[a:b] = val
        if with_grad:
            grad[a:b] = g

    slab_map(run, nx)
    return warped, grad


def warp(moving: Volume, field: DisplacementField) -> Volume:
    warped, _ = warp_with_grad(moving, field, with_grad=False)
    return Volume(warped, moving.spacing)


def round_half_away(p: np.ndarray) -> np.ndarray:
    return np.sign(p) * np.floor(np.abs(p) + 0.5)


def warp_labels(labels: LabelMap, field: DisplacementField) -> LabelMap:
    """Nearest-neighbour pull warp; ties round half away from zero."""
    check_same_dims(labels, field)
    nx, ny, nz = labels.dims
    grid = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"), axis=-1)
    p = round_half_away(grid + field.data)
    idx = [np.clip(p[..., d], 0, n - 1).astype(np.intp) for d, n in enumerate((nx, ny, nz))]
    return LabelMap(labels.data[idx[0], idx[1], idx[2]], labels.spacing)


def displacement_gradient(u: np.ndarray) -> np.ndarray:
    """``du[..., c, d] = d u_c / d x_d``: central differences, one-sided at the faces."""
    du = np.empty(u.shape + (3,))
    for c in range(3):
        for d in range(3):
            du[..., c, d] = np.gradient(u[..., c], axis=d, edge_order=1)
    return du


def jacobian_determinant(field: DisplacementField) -> Volume:
    if min(field.dims) < 2:
        raise InputError(f"Jacobian needs at least 2 voxels per axis, got {field.dims}")
    jac = displacement_gradient(field.data)
    jac[..., 0, 0] += 1.0
    jac[..., 1, 1] += 1.0
    jac[..., 2, 2] += 1.0
    a, b, c = jac[..., 0, 0], jac[..., 0, 1], jac[..., 0, 2]
    d, e, f = jac[..., 1, 0], jac[..., 1, 1], jac[..., 1, 2]
    g, h, i = jac[..., 2, 0], jac[..., 2, 1], jac[..., 2, 2]
    det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    return Volume(det, field.spacing)
