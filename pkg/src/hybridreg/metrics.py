"""Evaluation measures: per-label Dice, Hausdorff distance and SDlogJ."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import DimensionMismatchError
from .volume_core import DisplacementField, LabelMap, Volume

LOG_FLOOR = 1e-9


def _check_same(a: LabelMap, b: LabelMap):
    if a.dims != b.dims:
        raise DimensionMismatchError(f"label dims differ: {a.dims} vs {b.dims}")


def dice(a: LabelMap, b: LabelMap, label: int) -> float:
    """Overlap ``2|A & B| / (|A| + |B|)`` of one label.

    Two empty sets score 1, one empty set scores 0.
    """
    _check_same(a, b)
    ma = a.labels == label
    mb = b.labels == label
    size = int(ma.sum()) + int(mb.sum())
    if size == 0:
        return 1.0
    return 2.0 * int(np.logical_and(ma, mb).sum()) / size


def boundary_voxels(mask: np.ndarray) -> np.ndarray:
    """Coordinates of mask voxels with at least one 6-neighbour outside the mask.

    Voxels beyond the grid count as outside.
    """
    padded = np.pad(mask, 1, constant_values=False)
    core = padded[1:-1, 1:-1, 1:-1]
    interior = core.copy()
    for axis in range(3):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    return np.argwhere(core & ~interior)


def _directed(src, dst, spacing):
    _, idx = cKDTree(dst * spacing).query(src * spacing)
    # recompute from coordinates so the value does not depend on tree rounding
    delta = (src - dst[idx]) * spacing
    return np.sqrt(np.sum(delta * delta, axis=1))


def hausdorff(a: LabelMap, b: LabelMap, label: int, spacing=None, percentile=95) -> float:
    """Symmetric Hausdorff distance between the boundaries of one label, in mm.

    ``percentile=100`` gives the classic maximum; lower values take that
    percentile of the pooled distances from each boundary to the other.

    Raises
    ------
    ValueError
        If the label is absent from either map.
    """
    _check_same(a, b)
    spacing = np.asarray(a.spacing if spacing is None else spacing, dtype=np.float64)
    ba = boundary_voxels(a.labels == label)
    bb = boundary_voxels(b.labels == label)
    if len(ba) == 0 or len(bb) == 0:
        raise ValueError(f"label {label} is empty in one of the maps")
    dists = np.concatenate([_directed(ba, bb, spacing), _directed(bb, ba, spacing)])
    if percentile >= 100:
        return float(dists.max())
    return float(np.percentile(dists, percentile))


def jacobian_determinant(psi: DisplacementField) -> Volume:
    """Determinant of ``I + du/dx`` at every voxel (voxel units)."""
    if any(n < 2 for n in psi.dims):
        raise DimensionMismatchError(f"jacobian needs every dim >= 2, got {psi.dims}")
    # J[c][d] = d u_c / d x_d
    J = [list(np.gradient(psi.components[c], edge_order=1)) for c in range(3)]
    for c in range(3):
        J[c][c] = J[c][c] + 1.0
    det = (J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1])
           - J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0])
           + J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]))
    return Volume(det, psi.spacing)


def sdlogj(psi: DisplacementField):
    """Standard deviation of the log Jacobian determinant.

    Returns
    -------
    sdlogj : float
    folded_fraction : float
        Share of voxels with a non-positive determinant; those are clamped
        to ``1e-9`` before taking the log.
    """
    det = jacobian_determinant(psi).data
    logs = np.log(np.maximum(det, LOG_FLOOR))
    return float(np.std(logs)), float(np.mean(det <= 0))


@dataclass
class MetricsReport:
    dice_per_label: Dict[int, float]
    dice_mean: float
    dice_std: float
    hd_per_label: Dict[int, Optional[float]]
    hd_mean: float
    hd_std: float
    hd_percentile: float
    sdlogj: Optional[float]
    folded_fraction: Optional[float]
    excluded_hd: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d["dice_per_label"] = {str(k): v for k, v in self.dice_per_label.items()}
        d["hd_per_label"] = {str(k): v for k, v in self.hd_per_label.items()}
        return d

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def write_table(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "dice", "hd_mm"])
            for lab, d in self.dice_per_label.items():
                hd = self.hd_per_label.get(lab)
                writer.writerow([lab, f"{d:.6f}", "" if hd is None else f"{hd:.6f}"])


def _mean_std(values):
    if not values:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def evaluate_case(warped_labels: LabelMap, fixed_labels: LabelMap,
                  psi: Optional[DisplacementField] = None, spacing=None,
                  percentile=95) -> MetricsReport:
    """Aggregate metrics over the non-background labels of the fixed map.

    A label missing from the warped map scores Dice 0 and is left out of
    the Hausdorff statistics (listed in ``excluded_hd``).
    """
    _check_same(warped_labels, fixed_labels)
    if psi is not None and psi.dims != fixed_labels.dims:
        raise DimensionMismatchError(f"field dims {psi.dims} != label dims {fixed_labels.dims}")
    spacing = fixed_labels.spacing if spacing is None else spacing
    dice_per, hd_per, excluded = {}, {}, []
    for lab in fixed_labels.present_labels():
        dice_per[lab] = dice(warped_labels, fixed_labels, lab)
        if np.any(warped_labels.labels == lab):
            hd_per[lab] = hausdorff(warped_labels, fixed_labels, lab, spacing, percentile)
        else:
            hd_per[lab] = None
            excluded.append(lab)
    d_mean, d_std = _mean_std(list(dice_per.values()))
    h_mean, h_std = _mean_std([v for v in hd_per.values() if v is not None])
    sd, folded = sdlogj(psi) if psi is not None else (None, None)
    return MetricsReport(dice_per, d_mean, d_std, hd_per, h_mean, h_std,
                         float(percentile), sd, folded, excluded)
