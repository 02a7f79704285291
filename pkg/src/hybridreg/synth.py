"""Synthetic phantoms and smooth ground-truth deformations.

Field convention: a field ``u`` maps fixed-grid coordinates into the
moving image, so ``warp(moving, u)`` is the moving image resampled onto the
fixed grid. :func:`make_pair` builds ``moving`` such that this holds for
the ground-truth field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .exceptions import DimensionMismatchError
from .metrics import jacobian_determinant
from .resample import identity_grid, interpolate, warp_nearest
from .volume_core import DisplacementField, LabelMap, Level, Volume

MIN_DET = 0.05
MAX_DRAWS = 10
BACKGROUND = 0.1


@dataclass(frozen=True)
class PhantomSpec:
    """Ellipsoid phantom description.

    ``blobs`` optionally fixes the geometry as ``(center, radii)`` pairs in
    voxel coordinates; otherwise ``num_blobs`` ellipsoids are drawn from
    ``seed``. ``intensity_contrast`` gives each blob's offset above the
    background level (random when omitted).
    """

    dims: Tuple[int, int, int] = (48, 48, 48)
    num_blobs: int = 5
    intensity_contrast: Optional[Sequence[float]] = None
    noise_sigma: float = 0.0
    seed: int = 0
    blobs: Optional[Sequence[Tuple[Sequence[float], Sequence[float]]]] = None

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.blobs is not None:
            object.__setattr__(self, "num_blobs", len(self.blobs))
        if self.num_blobs < 0 or self.num_blobs + 1 > 256:
            raise ValueError("num_blobs must be in [0, 255]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.intensity_contrast is not None and len(self.intensity_contrast) != self.num_blobs:
            raise ValueError("intensity_contrast needs one entry per blob")


@dataclass(frozen=True)
class GroundTruthField:
    field: DisplacementField
    max_magnitude: float
    smoothness_sigma: float


def _draw_blobs(spec: PhantomSpec, rng):
    if spec.blobs is not None:
        return [(np.asarray(c, float), np.asarray(r, float)) for c, r in spec.blobs]
    dims = np.asarray(spec.dims, dtype=np.float64)
    blobs = []
    for _ in range(spec.num_blobs):
        center = rng.uniform(0.3, 0.7, 3) * (dims - 1)
        radii = rng.uniform(0.12, 0.25, 3) * dims
        blobs.append((center, radii))
    return blobs


def rasterize_ellipsoid(dims, center, radii) -> np.ndarray:
    """Boolean mask of voxels whose centres fall inside the ellipsoid."""
    grid = identity_grid(dims)
    q = sum(((grid[a] - center[a]) / radii[a]) ** 2 for a in range(3))
    return q <= 1.0


def make_phantom(spec: PhantomSpec):
    """Piecewise-constant phantom and its label map.

    Blob ``i`` gets label ``i + 1``; later blobs paint over earlier ones.
    Blobs reaching past the grid are clipped.
    """
    rng = np.random.default_rng([spec.seed, 0])
    blobs = _draw_blobs(spec, rng)
    if spec.intensity_contrast is None:
        contrast = rng.uniform(0.15, 0.85, len(blobs))
    else:
        contrast = np.asarray(spec.intensity_contrast, dtype=np.float64)
    image = np.full(spec.dims, BACKGROUND)
    labels = np.zeros(spec.dims, dtype=np.int64)
    for i, (center, radii) in enumerate(blobs):
        mask = rasterize_ellipsoid(spec.dims, center, radii)
        image[mask] = BACKGROUND + contrast[i]
        labels[mask] = i + 1
    return Volume(image), LabelMap(labels, len(blobs) + 1)


def make_smooth_field(dims, max_magnitude, smoothness_sigma, seed=0) -> GroundTruthField:
    """Random smooth displacement with peak magnitude ``max_magnitude`` voxels.

    Gaussian-smoothed white noise, rescaled; draws whose Jacobian
    determinant drops to 0.05 or below anywhere are rejected.

    Raises
    ------
    RuntimeError
        After ten rejected draws.
    """
    dims = tuple(int(d) for d in dims)
    if max_magnitude <= 0:
        return GroundTruthField(DisplacementField.zeros(dims), 0.0, smoothness_sigma)
    for draw in range(MAX_DRAWS):
        rng = np.random.default_rng([seed, draw])
        noise = rng.standard_normal((3,) + dims)
        # reflective borders: edge replication would inflate the border noise
        smooth = ndimage.gaussian_filter(noise, (0, smoothness_sigma, smoothness_sigma,
                                                 smoothness_sigma), mode="reflect", truncate=3.0)
        peak = np.sqrt(np.sum(smooth * smooth, axis=0)).max()
        comps = smooth * (max_magnitude / peak)
        f = DisplacementField(comps, level=Level.FULL)
        if jacobian_determinant(f).data.min() > MIN_DET:
            return GroundTruthField(f, float(max_magnitude), float(smoothness_sigma))
    raise RuntimeError(f"no diffeomorphic draw in {MAX_DRAWS} attempts; lower max_magnitude")


def invert_field(f: DisplacementField, iterations=50) -> DisplacementField:
    """Fixed-point inverse: ``v(y) = -u(y + v(y))``."""
    grid = identity_grid(f.dims)
    v = -f.components.copy()
    for _ in range(iterations):
        v = -interpolate(f.components, grid + v)
    return DisplacementField(v, f.spacing, f.level)


def make_pair(spec: PhantomSpec, gt):
    """Moving/fixed images and labels related by the ground-truth field.

    ``fixed`` is the phantom; ``moving`` is the phantom pushed through the
    inverse field so that ``warp(moving, gt)`` reproduces ``fixed``. Image
    and labels both use nearest-neighbour resampling, so the moving phantom
    keeps edges as crisp as the fixed one and stays consistent with its
    labels. Independent Gaussian noise is added to both images afterwards.

    Returns
    -------
    moving, fixed : Volume
    moving_labels, fixed_labels : LabelMap
    """
    f = getattr(gt, "field", gt)
    if tuple(f.dims) != tuple(spec.dims):
        raise DimensionMismatchError(f"field dims {f.dims} != phantom dims {spec.dims}")
    image, labels = make_phantom(spec)
    inverse = invert_field(f)
    moving = warp_nearest(image, inverse).data
    moving_labels = warp_nearest(labels, inverse)
    fixed = image.data
    if spec.noise_sigma > 0:
        rng = np.random.default_rng([spec.seed, 1])
        moving = moving + rng.normal(0.0, spec.noise_sigma, moving.shape)
        fixed = fixed + rng.normal(0.0, spec.noise_sigma, fixed.shape)
    return Volume(moving), Volume(fixed), moving_labels, labels
