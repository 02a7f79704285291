"""Input coercion helpers for the estimator API.

They accept either the package's grid types or bare numpy arrays, so the
estimator can sit in pipelines that pass plain arrays around.
"""

import numpy as np

from .exceptions import DimensionMismatchError, LevelMismatchError
from .volume_core import DisplacementField, LabelMap, Level, Volume


def check_volume(X, name="X", spacing=None) -> Volume:
    if isinstance(X, Volume):
        return X
    if isinstance(X, LabelMap):
        return Volume(X.labels.astype(np.float64), X.spacing)
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 3:
        raise DimensionMismatchError(f"{name} must be a 3D array, got shape {arr.shape}")
    return Volume(arr, spacing or (1.0, 1.0, 1.0))


def check_labels(y, name="labels", spacing=None):
    if y is None or isinstance(y, LabelMap):
        return y
    if isinstance(y, Volume):
        return LabelMap(np.rint(y.data).astype(np.int64), spacing=y.spacing)
    arr = np.asarray(y)
    if arr.ndim != 3:
        raise DimensionMismatchError(f"{name} must be a 3D array, got shape {arr.shape}")
    return LabelMap(arr, spacing=spacing or (1.0, 1.0, 1.0))


def check_same_grid(*items):
    """Raise unless every non-None item shares the same dims."""
    dims = {tuple(i.dims) for i in items if i is not None}
    if len(dims) > 1:
        raise DimensionMismatchError(f"inputs live on different grids: {sorted(dims)}")


def check_full_field(f: DisplacementField, dims) -> DisplacementField:
    if f.level is not Level.FULL:
        raise LevelMismatchError("a full-resolution field is required; upsample the half field first")
    f.check_pairs_with(dims)
    return f
