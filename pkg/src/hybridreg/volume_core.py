"""Grid data types.

All lattices are held as numpy arrays indexed ``[x, y, z]``. When flattened
for storage they use Fortran order, i.e. x varies fastest, which is the
NIfTI-1 on-disk order. Arrays are made read-only on construction so the
types can be shared freely between workers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .exceptions import DimensionMismatchError, NonFiniteError

Dims = Tuple[int, int, int]
Spacing = Tuple[float, float, float]


class Level(str, enum.Enum):
    HALF = "half"
    FULL = "full"


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _as_dims(dims) -> Dims:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise DimensionMismatchError(f"dims must be three positive ints, got {dims}")
    return dims


def _as_spacing(spacing) -> Spacing:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"spacing must be three positive numbers, got {spacing}")
    return spacing


def half_dims(dims: Sequence[int]) -> Dims:
    """Grid size of the factor-2 coarser lattice (``ceil(n / 2)`` per axis)."""
    return tuple((int(d) + 1) // 2 for d in dims)


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar 3D image.

    Attributes
    ----------
    data : ndarray, shape (nx, ny, nz), float64
    spacing : tuple of float
        Millimetres per voxel along x, y, z.
    """

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)
    intensity_range: Tuple[float, float] = field(init=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise DimensionMismatchError(f"volume data must be 3D, got shape {data.shape}")
        _as_dims(data.shape)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("volume contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))
        object.__setattr__(self, "intensity_range", (float(data.min()), float(data.max())))

    @property
    def dims(self) -> Dims:
        return self.data.shape

    def ravel(self) -> np.ndarray:
        """Payload in x-fastest linear order."""
        return self.data.ravel(order="F")


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Dense 3-vector field in voxel units of its own grid.

    ``components[c]`` holds the displacement along axis ``c``. A point ``x``
    of the (fixed) grid is mapped to ``x + u(x)`` in the moving image.
    """

    components: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)
    level: Level = Level.FULL

    def __post_init__(self):
        comp = np.asarray(self.components, dtype=np.float64)
        if comp.ndim != 4 or comp.shape[0] != 3:
            raise DimensionMismatchError(
                f"field components must have shape (3, nx, ny, nz), got {comp.shape}")
        _as_dims(comp.shape[1:])
        if not np.all(np.isfinite(comp)):
            raise NonFiniteError("displacement field contains non-finite values")
        object.__setattr__(self, "components", _frozen(comp))
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))
        object.__setattr__(self, "level", Level(self.level))

    @property
    def dims(self) -> Dims:
        return self.components.shape[1:]

    @classmethod
    def zeros(cls, dims, spacing=(1.0, 1.0, 1.0), level=Level.FULL) -> "DisplacementField":
        return cls(np.zeros((3,) + _as_dims(dims)), spacing, level)

    def check_pairs_with(self, image_dims) -> None:
        """Raise unless this field lives on the grid implied by ``image_dims``."""
        image_dims = tuple(image_dims)
        expected = half_dims(image_dims) if self.level is Level.HALF else image_dims
        if self.dims != expected:
            raise DimensionMismatchError(
                f"{self.level.value} field of dims {self.dims} does not pair with "
                f"image dims {image_dims} (expected {expected})")


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Integer segmentation; class 0 is background."""

    labels: np.ndarray
    num_classes: int = None
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        raw = np.asarray(self.labels)
        if raw.ndim != 3:
            raise DimensionMismatchError(f"label data must be 3D, got shape {raw.shape}")
        if raw.dtype.kind == "f":
            if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
                raise ValueError("label values must be integers")
        labels = raw.astype(np.int64)
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        top = int(labels.max()) + 1 if labels.size else 1
        num_classes = top if self.num_classes is None else int(self.num_classes)
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if top > num_classes:
            raise ValueError(f"label {top - 1} out of range for num_classes={num_classes}")
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "num_classes", num_classes)
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @property
    def dims(self) -> Dims:
        return self.labels.shape

    def present_labels(self):
        """Sorted non-background labels that occur at least once."""
        return [int(v) for v in np.unique(self.labels) if v != 0]


SUM_TOL = 1e-5
PROB_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class SoftLabelVolume:
    """Per-class probabilities, ``data`` shaped (num_classes, nx, ny, nz)."""

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[0] < 1:
            raise DimensionMismatchError(
                f"soft labels must have shape (C, nx, ny, nz), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("soft labels contain non-finite values")
        if data.size and (data.min() < -PROB_SLACK or data.max() > 1 + PROB_SLACK):
            raise ValueError("soft label probabilities must lie in [0, 1]")
        if data.size and np.max(np.abs(data.sum(axis=0) - 1.0)) > SUM_TOL:
            raise ValueError(f"class probabilities must sum to 1 within {SUM_TOL} per voxel")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @property
    def dims(self) -> Dims:
        return self.data.shape[1:]

    @property
    def num_classes(self) -> int:
        return self.data.shape[0]


def new_volume(dims, spacing, data) -> Volume:
    """Build a :class:`Volume` from a flat x-fastest payload.

    ``data`` may also be an array already shaped ``dims``.

    Raises
    ------
    DimensionMismatchError
        If the payload length does not equal ``nx * ny * nz``.
    NonFiniteError
        If any value is NaN or infinite.
    """
    dims = _as_dims(dims)
    arr = np.asarray(data, dtype=np.float64)
    if arr.shape != dims:
        if arr.size != int(np.prod(dims)):
            raise DimensionMismatchError(
                f"payload has {arr.size} values, dims {dims} need {int(np.prod(dims))}")
        arr = arr.reshape(dims, order="F")
    return Volume(arr, spacing)


def normalize_intensities(v: Volume) -> Volume:
    """Map intensities linearly onto [0, 1]; a constant volume becomes all zeros."""
    lo, hi = v.intensity_range
    if hi <= lo:
        return Volume(np.zeros(v.dims), v.spacing)
    out = (v.data - lo) / (hi - lo)
    return Volume(np.clip(out, 0.0, 1.0), v.spacing)


def one_hot(labels: LabelMap) -> SoftLabelVolume:
    """Indicator channel per class."""
    classes = np.arange(labels.num_classes).reshape(-1, 1, 1, 1)
    return SoftLabelVolume((labels.labels[None] == classes).astype(np.float64), labels.spacing)
