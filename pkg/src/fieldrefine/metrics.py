"""Registration quality metrics: Dice, HD95 (mm) and SDlogJ."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy import ndimage

from .errors import InputError
from .volume import DisplacementField, LabelMap, check_same_dims
from .warp import jacobian_determinant, warp_labels

FOLD_THRESHOLD = 1e-9

_SIX = ndimage.generate_binary_structure(3, 1)


def dice(a: LabelMap, b: LabelMap, label: int) -> float:
    check_same_dims(a, b)
    ma = a.data == label
    mb = b.data == label
    na = int(ma.sum())
    nb = int(mb.sum())
    if na == 0 and nb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(ma, mb).sum()) / (na + nb)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with at least one 6-neighbour outside the mask (grid exterior counts as outside)."""
    eroded = ndimage.binary_erosion(mask, structure=_SIX, border_value=0)
    return mask & ~eroded


def surface_distances(a: np.ndarray, b: np.ndarray, spacing) -> np.ndarray:
    """Pooled directed distances (mm) between the boundaries of two boolean masks."""
    ba = boundary(a)
    bb = boundary(b)
    # distance from every voxel to the nearest boundary voxel of the other mask
    to_b = ndimage.distance_transform_edt(~bb, sampling=spacing)
    to_a = ndimage.distance_transform_edt(~ba, sampling=spacing)
    return np.concatenate([to_b[ba], to_a[bb]])


def hd95(a: LabelMap, b: LabelMap, label: int, spacing=None) -> float:
    check_same_dims(a, b)
    spacing = tuple(spacing) if spacing is not None else a.spacing
    ma = a.data == label
    mb = b.data == label
    if not ma.any() or not mb.any():
        raise InputError(f"undefined HD95: label {label} is empty in one of the maps")
    d = surface_distances(ma, mb, spacing)
    return float(np.percentile(d, 95, method="linear"))


def sdlogj(field: DisplacementField, interior_only: bool = False):
    """``(std of log det J, folded fraction)`` with population std.

    Determinants <= 1e-9 are excluded from the std and counted as folded.
    ``interior_only`` drops the boundary faces (where one-sided differences
    apply) from both statistics.
    """
    det = jacobian_determinant(field).data
    if interior_only:
        if min(det.shape) < 3:
            raise InputError("interior-only SDlogJ needs at least 3 voxels per axis")
        det = det[1:-1, 1:-1, 1:-1]
    ok = det > FOLD_THRESHOLD
    folded = int((~ok).sum()) / det.size
    if not ok.any():
        raise InputError("every voxel is folded; SDlogJ undefined")
    return float(np.std(np.log(det[ok]))), float(folded)


@dataclass(frozen=True)
class MetricsReport:
    dice_per_label: Dict[int, float]
    dice_mean: float
    hd95_per_label: Dict[int, Optional[float]]
    sdlogj: float
    folded_fraction: float

    def as_dict(self) -> dict:
        return {
            "dice_per_label": {str(k): v for k, v in self.dice_per_label.items()},
            "dice_mean": self.dice_mean,
            "hd95_per_label": {str(k): v for k, v in self.hd95_per_label.items()},
            "sdlogj": self.sdlogj,
            "folded_fraction": self.folded_fraction,
        }


def evaluate(fixed_labels: LabelMap, moving_labels: LabelMap, field: DisplacementField,
             spacing=None) -> MetricsReport:
    """Warp the moving labels and score them against the fixed labels.

    Metrics cover labels present in both maps (background excluded).  HD95 is
    None for a label that vanishes after warping.
    """
    check_same_dims(fixed_labels, moving_labels, field)
    spacing = tuple(spacing) if spacing is not None else fixed_labels.spacing
    common = sorted(set(fixed_labels.labels()) & set(moving_labels.labels()))
    if not common:
        raise InputError("no common labels between fixed and moving label maps")
    warped = warp_labels(moving_labels, field)
    dice_map = {}
    hd_map = {}
    for lab in common:
        dice_map[lab] = dice(fixed_labels, warped, lab)
        try:
            hd_map[lab] = hd95(fixed_labels, warped, lab, spacing)
        except InputError:
            hd_map[lab] = None
    sd, folded = sdlogj(field)
    return MetricsReport(dice_map, float(math.fsum(dice_map.values()) / len(dice_map)), hd_map, sd, folded)
