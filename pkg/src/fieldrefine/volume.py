"""Volume, displacement-field and label-map containers.

Arrays are indexed ``data[i, j, k]`` with ``i`` along x, ``j`` along y and
``k`` along z.  The linear (on-disk) order is x fastest, then y, then z,
i.e. ``data.ravel(order="F")``.  Displacement fields carry a trailing
channel axis ``(ux, uy, uz)`` in voxel units; on disk the channel is the
fastest-varying index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import InputError

Dims = Tuple[int, int, int]
Spacing = Tuple[float, float, float]

FLOAT = np.float64


def _check_spacing(spacing) -> Spacing:
    sp = tuple(float(s) for s in spacing)
    if len(sp) != 3:
        raise InputError(f"spacing must have 3 components, got {len(sp)}")
    if not all(np.isfinite(s) and s > 0 for s in sp):
        raise InputError(f"spacing components must be finite and > 0, got {sp}")
    return sp


@dataclass(frozen=True, eq=False)
class Volume:
    """3D scalar image with physical voxel spacing in mm."""

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=FLOAT)
        if data.ndim != 3 or min(data.shape) < 1:
            raise InputError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InputError("volume contains non-finite samples")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> Dims:
        return tuple(int(n) for n in self.data.shape)

    def linear(self) -> np.ndarray:
        """Samples in the documented linear order (x fastest)."""
        return self.data.ravel(order="F")

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Dense displacement u(x) in voxel units, shape ``(nx, ny, nz, 3)``.

    The payload is writable: the optimizer owns and updates it.
    """

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=FLOAT)
        if data.ndim != 4 or data.shape[3] != 3 or min(data.shape[:3]) < 1:
            raise InputError(f"field data must have shape (nx, ny, nz, 3), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InputError("field contains non-finite components")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @classmethod
    def zeros(cls, dims, spacing=(1.0, 1.0, 1.0)) -> "DisplacementField":
        return cls(np.zeros(tuple(dims) + (3,), dtype=FLOAT), spacing)

    @property
    def dims(self) -> Dims:
        return tuple(int(n) for n in self.data.shape[:3])

    def copy(self) -> "DisplacementField":
        return DisplacementField(self.data.copy(), self.spacing)

    def __eq__(self, other):
        if not isinstance(other, DisplacementField):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Integer segmentation; 0 is background."""

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.ndim != 3 or min(raw.shape) < 1:
            raise InputError(f"label data must be a non-empty 3D array, got shape {raw.shape}")
        if raw.dtype.kind == "f":
            if not np.all(np.isfinite(raw)) or not np.array_equal(raw, np.round(raw)):
                raise InputError("label map contains non-integer values")
        elif raw.dtype.kind not in "iub":
            raise InputError(f"unsupported label dtype {raw.dtype}")
        data = raw.astype(np.int64)
        if data.size and data.min() < 0:
            raise InputError("label values must be non-negative")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> Dims:
        return tuple(int(n) for n in self.data.shape)

    def labels(self, include_background: bool = False) -> list[int]:
        values = [int(v) for v in np.unique(self.data)]
        return values if include_background else [v for v in values if v != 0]

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.data, other.data)


def check_same_dims(*items) -> Dims:
    dims = items[0].dims
    for item in items[1:]:
        if item.dims != dims:
            raise InputError(f"shape mismatch: {dims} vs {item.dims}")
    return dims


def normalize_intensity(v: Volume) -> Volume:
    """Min-max rescale to [0, 1]; a constant volume maps to all zeros."""
    lo = v.data.min()
    hi = v.data.max()
    if hi == lo:
        return Volume(np.zeros_like(v.data), v.spacing)
    if lo == 0.0 and hi == 1.0:
        return v
    return Volume((v.data - lo) / (hi - lo), v.spacing)
