"""Deterministic synthetic phantoms, label maps and deformation fields.

Randomness comes from numpy's Philox4x64 counter-based generator seeded with
the 64-bit ``seed``; every generator here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from .errors import InputError
from .volume import DisplacementField, LabelMap, Volume, normalize_intensity
from .warp import jacobian_determinant, warp, warp_labels

KINDS = ("spheres", "checker_smooth", "gradient_blobs")
FOLD_FREE_MIN_DET = 0.1
MAX_FIELD_RETRIES = 32


def philox(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), stream]))


def _dims3(dims) -> Tuple[int, int, int]:
    if np.isscalar(dims):
        dims = (int(dims),) * 3
    dims = tuple(int(n) for n in dims)
    if len(dims) != 3:
        raise InputError(f"dims must have 3 entries, got {dims}")
    return dims


@dataclass(frozen=True)
class PhantomSpec:
    dims: Tuple[int, int, int] = (16, 16, 16)
    kind: str = "spheres"
    num_objects: int = 3
    seed: int = 0


def _texture(rng, dims, sigma):
    return ndimage.gaussian_filter(rng.standard_normal(dims), sigma, mode="reflect")


def _grid(dims):
    return np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")


def _spheres(rng, dims, num):
    x, y, z = _grid(dims)
    lo = min(dims)
    labels = np.zeros(dims, dtype=np.int64)
    img = 0.15 * _texture(rng, dims, 2.0)
    for k in range(1, num + 1):
        r = rng.uniform(lo / 8.0, lo / 4.5)
        c = [rng.uniform(r * 0.8, n - 1 - r * 0.8) for n in dims]
        inside = (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2 <= r * r
        labels[inside] = k
        img[inside] = rng.uniform(0.5, 1.0) + 0.25 * _texture(rng, dims, 1.5)[inside]
    return img, labels


def _checker(rng, dims, num):
    cell = max(2, min(dims) // 4)
    x, y, z = _grid(dims)
    cells = (x // cell).astype(int), (y // cell).astype(int), (z // cell).astype(int)
    parity = (cells[0] + cells[1] + cells[2]) % 2
    ncell = [int(np.ceil(n / cell)) for n in dims]
    levels = rng.uniform(0.0, 1.0, size=ncell)
    img = levels[cells] + 0.1 * _texture(rng, dims, 1.5)
    labels = np.where(parity == 1, 1, 0).astype(np.int64)
    # up to num_objects distinct labels cycling over the odd cells
    if num > 1:
        ids = (cells[0] + ncell[0] * (cells[1] + ncell[1] * cells[2])) // 2
        labels = np.where(parity == 1, 1 + ids % num, 0).astype(np.int64)
    return img, labels


def _blobs(rng, dims, num):
    x, y, z = _grid(dims)
    lo = min(dims)
    img = 0.3 * (x / dims[0]) + 0.2 * (y / dims[1]) + 0.05 * _texture(rng, dims, 2.0)
    peaks = np.zeros((num,) + dims)
    for k in range(num):
        s = rng.uniform(lo / 10.0, lo / 5.0)
        c = [rng.uniform(0.2 * n, 0.8 * n) for n in dims]
        g = np.exp(-((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2) / (2 * s * s))
        peaks[k] = g
        img += rng.uniform(0.4, 1.0) * g
    labels = np.where(peaks.max(axis=0) > 0.5, 1 + peaks.argmax(axis=0), 0).astype(np.int64)
    return img, labels


def make_phantom(spec: PhantomSpec) -> Tuple[Volume, LabelMap]:
    """Smooth image in [0, 1] and its label map."""
    dims = _dims3(spec.dims)
    if min(dims) < 8:
        raise InputError(f"phantom dims must be >= 8 per axis, got {dims}")
    if spec.kind not in KINDS:
        raise InputError(f"unknown phantom kind {spec.kind!r}; expected one of {KINDS}")
    if spec.num_objects < 1:
        raise InputError("num_objects must be >= 1")
    rng = philox(spec.seed)
    build = {"spheres": _spheres, "checker_smooth": _checker, "gradient_blobs": _blobs}[spec.kind]
    img, labels = build(rng, dims, spec.num_objects)
    img = ndimage.gaussian_filter(img, 0.7, mode="nearest")
    if not (labels > 0).any():
        raise InputError("phantom has no foreground; try another seed")
    return normalize_intensity(Volume(img)), LabelMap(labels)


def make_smooth_field(dims, amplitude: float, smoothness_sigma: float = 4.0, seed: int = 0) -> DisplacementField:
    """Seeded, Gaussian-smoothed random field whose largest vector has length ``amplitude``.

    Candidates are redrawn (bounded retries) until the minimum Jacobian
    determinant exceeds 0.1.
    """
    dims = _dims3(dims)
    if not (np.isfinite(amplitude) and amplitude >= 0):
        raise InputError("amplitude must be finite and >= 0")
    if smoothness_sigma <= 0:
        raise InputError("smoothness_sigma must be > 0")
    if amplitude == 0:
        return DisplacementField.zeros(dims)
    for attempt in range(MAX_FIELD_RETRIES):
        rng = philox(seed, stream=1 + attempt)
        raw = rng.standard_normal(dims + (3,))
        u = ndimage.gaussian_filter(raw, (smoothness_sigma,) * 3 + (0,), mode="reflect")
        peak = np.sqrt((u * u).sum(axis=-1)).max()
        if peak == 0:
            continue
        field = DisplacementField(u * (amplitude / peak))
        if min(dims) < 2 or jacobian_determinant(field).data.min() > FOLD_FREE_MIN_DET:
            return field
    raise InputError(
        f"no fold-free field within {MAX_FIELD_RETRIES} draws (amplitude {amplitude} too large for sigma {smoothness_sigma})"
    )


def make_translation_field(dims, t) -> DisplacementField:
    dims = _dims3(dims)
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (3,):
        raise InputError("translation must be a 3-vector")
    return DisplacementField(np.broadcast_to(t, dims + (3,)))


@dataclass(frozen=True)
class SyntheticTask:
    """Registration pair with known answer: ``fixed = warp(moving, gt_field)``."""

    fixed: Volume
    moving: Volume
    fixed_labels: LabelMap
    moving_labels: LabelMap
    gt_field: DisplacementField

    def endpoint_error(self, field: DisplacementField) -> float:
        """Mean |u - u_gt| over the fixed-image foreground (voxels)."""
        fg = self.fixed_labels.data > 0
        err = np.sqrt(((field.data - self.gt_field.data) ** 2).sum(axis=-1))
        return float(err[fg].mean())


def make_task(dims=16, seed: int = 0, amplitude: float = 2.0, smoothness_sigma: float = 4.0,
              kind: str = "spheres", num_objects: int = 3) -> SyntheticTask:
    dims = _dims3(dims)
    moving, moving_labels = make_phantom(PhantomSpec(dims, kind, num_objects, seed))
    gt = make_smooth_field(dims, amplitude, smoothness_sigma, seed)
    return SyntheticTask(warp(moving, gt), moving, warp_labels(moving_labels, gt), moving_labels, gt)
