"""Spatial operators: sampling, warping, factor-2 pyramids and Gaussian blur.

Out-of-grid coordinates are clamped to the valid domain (border
replication), so every operator here is defined for any displacement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import DimensionMismatchError, LevelMismatchError
from .volume_core import (DisplacementField, LabelMap, Level, SoftLabelVolume, Volume,
                     half_dims)


def identity_grid(dims) -> np.ndarray:
    """Voxel coordinates of every node, shape (3, nx, ny, nz)."""
    return np.indices(tuple(dims), dtype=np.float64)


def _axis_weights(p, n):
    """Lower corner index, fractional offset and in-domain mask along one axis."""
    inside = (p >= 0) & (p <= n - 1)
    q = np.clip(p, 0, n - 1)
    i0 = np.minimum(np.floor(q).astype(np.intp), max(n - 2, 0))
    i1 = np.minimum(i0 + 1, n - 1)
    t = q - i0
    return i0, i1, t, inside


def interpolate(data, coords, with_grad=False):
    """Trilinear interpolation of ``data`` at continuous voxel ``coords``.

    Parameters
    ----------
    data : ndarray, shape (..., nx, ny, nz)
        Leading axes are treated as channels sharing the same coordinates.
    coords : ndarray, shape (3, ...)
    with_grad : bool
        Also return the derivative of the interpolant w.r.t. each
        coordinate. It is zero along an axis where the coordinate was
        clamped and one-sided (from above) at integer nodes.

    Returns
    -------
    values : ndarray, shape data.shape[:-3] + coords.shape[1:]
    grad : ndarray, shape (3,) + values.shape, only if ``with_grad``
    """
    data = np.asarray(data, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    nx, ny, nz = data.shape[-3:]
    lead = data.shape[:-3]
    flat = data.reshape(lead + (-1,))
    x0, x1, tx, inx = _axis_weights(coords[0], nx)
    y0, y1, ty, iny = _axis_weights(coords[1], ny)
    z0, z1, tz, inz = _axis_weights(coords[2], nz)

    def at(ix, iy, iz):
        return flat[..., (ix * ny + iy) * nz + iz]

    v000, v100 = at(x0, y0, z0), at(x1, y0, z0)
    v010, v110 = at(x0, y1, z0), at(x1, y1, z0)
    v001, v101 = at(x0, y0, z1), at(x1, y0, z1)
    v011, v111 = at(x0, y1, z1), at(x1, y1, z1)

    # blend along x, then y, then z
    c00 = v000 + tx * (v100 - v000)
    c10 = v010 + tx * (v110 - v010)
    c01 = v001 + tx * (v101 - v001)
    c11 = v011 + tx * (v111 - v011)
    c0 = c00 + ty * (c10 - c00)
    c1 = c01 + ty * (c11 - c01)
    values = c0 + tz * (c1 - c0)
    if not with_grad:
        return values

    dx0 = (v100 - v000) + ty * ((v110 - v010) - (v100 - v000))
    dx1 = (v101 - v001) + ty * ((v111 - v011) - (v101 - v001))
    gx = (dx0 + tz * (dx1 - dx0)) * inx
    gy = ((c10 - c00) + tz * ((c11 - c01) - (c10 - c00))) * iny
    gz = (c1 - c0) * inz
    return values, np.stack([gx, gy, gz])


def trilinear_sample(v: Volume, p) -> float:
    """Value of ``v`` at one continuous voxel position ``p`` (clamped)."""
    p = np.asarray(p, dtype=np.float64).reshape(3)
    return float(interpolate(v.data, p)[()])


def _check_field_grid(data_dims, f: DisplacementField):
    if tuple(data_dims) != tuple(f.dims):
        raise DimensionMismatchError(f"image dims {tuple(data_dims)} != field dims {f.dims}")


def warp(v: Volume, f: DisplacementField) -> Volume:
    """Resample ``v`` at ``x + u(x)``: the moving image expressed on the fixed grid."""
    _check_field_grid(v.dims, f)
    coords = identity_grid(v.dims) + f.components
    return Volume(interpolate(v.data, coords), v.spacing)


def renormalize(channels, floor=1e-6):
    """Rescale class vectors to unit sum where the sum exceeds ``floor``."""
    total = channels.sum(axis=0)
    scale = np.where(total > floor, total, 1.0)
    return channels / scale


def warp_soft(s: SoftLabelVolume, f: DisplacementField) -> SoftLabelVolume:
    """Channel-wise trilinear warp of soft labels, renormalized per voxel."""
    _check_field_grid(s.dims, f)
    coords = identity_grid(s.dims) + f.components
    return SoftLabelVolume(renormalize(interpolate(s.data, coords)), s.spacing)


def nearest_indices(dims, f: DisplacementField):
    """Index arrays of the voxel nearest to ``x + u(x)``, clamped to the grid."""
    coords = identity_grid(dims) + f.components
    return tuple(np.clip(np.floor(coords[a] + 0.5), 0, n - 1).astype(np.intp)
                 for a, n in enumerate(dims))


def warp_nearest(v, f: DisplacementField):
    """Nearest-neighbour warp of a :class:`LabelMap` (or a :class:`Volume`)."""
    _check_field_grid(v.dims, f)
    idx = nearest_indices(v.dims, f)
    if isinstance(v, Volume):
        return Volume(v.data[idx], v.spacing)
    return LabelMap(v.labels[idx], v.num_classes, v.spacing)


def block_mean(arr) -> np.ndarray:
    """2x2x2 block average over the last three axes.

    Blocks that hang over an odd-sized edge are averaged over the voxels
    they actually contain.
    """
    arr = np.asarray(arr, dtype=np.float64)
    lead = arr.shape[:-3]
    dims = arr.shape[-3:]
    out = half_dims(dims)
    pad = [(0, 0)] * len(lead) + [(0, 2 * o - d) for o, d in zip(out, dims)]
    summed = np.pad(arr, pad).reshape(lead + (out[0], 2, out[1], 2, out[2], 2))
    summed = summed.sum(axis=(-5, -3, -1))
    counts = np.pad(np.ones(dims), pad[len(lead):]).reshape(out[0], 2, out[1], 2, out[2], 2)
    return summed / counts.sum(axis=(1, 3, 5))


def downsample2(v):
    """Halve the resolution of a :class:`Volume` or :class:`SoftLabelVolume`.

    Output dims are ``ceil(dims / 2)`` and the spacing doubles.
    """
    if any(d < 2 for d in v.dims):
        raise DimensionMismatchError(f"downsample2 needs every dim >= 2, got {v.dims}")
    spacing = tuple(2.0 * s for s in v.spacing)
    if isinstance(v, SoftLabelVolume):
        return SoftLabelVolume(block_mean(v.data), spacing)
    return Volume(block_mean(v.data), spacing)


def upsample_field2(f: DisplacementField, target_dims) -> DisplacementField:
    """Interpolate a half-level field onto the full grid.

    Full-grid node ``x`` samples the half field at ``x / 2``; values are
    doubled because displacements are measured in voxels of their own grid.
    """
    if f.level is not Level.HALF:
        raise LevelMismatchError("upsample_field2 expects a half-level field")
    target_dims = tuple(int(d) for d in target_dims)
    if half_dims(target_dims) != tuple(f.dims):
        raise DimensionMismatchError(
            f"half field dims {f.dims} inconsistent with target dims {target_dims}")
    coords = identity_grid(target_dims) / 2.0
    comps = 2.0 * interpolate(f.components, coords)
    spacing = tuple(s / 2.0 for s in f.spacing)
    return DisplacementField(comps, spacing, Level.FULL)


@dataclass(frozen=True)
class KernelSpec:
    """Normalized, symmetric 1D Gaussian taps."""

    size: int = 7
    sigma: float = 1.0

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.size}")
        if not self.sigma > 0:
            raise ValueError("kernel sigma must be positive")

    @property
    def weights(self) -> np.ndarray:
        r = np.arange(self.size) - self.size // 2
        w = np.exp(-0.5 * (r / self.sigma) ** 2)
        return w / w.sum()

    @classmethod
    def for_sigma(cls, sigma: float) -> "KernelSpec":
        """Kernel truncated at three standard deviations."""
        return cls(2 * int(np.ceil(3 * sigma)) + 1, sigma)


BOUNDARY_KERNEL = KernelSpec(7, 1.0)


def blur_array(arr, k: KernelSpec = BOUNDARY_KERNEL) -> np.ndarray:
    """Separable Gaussian blur over the last three axes with edge replication."""
    out = np.asarray(arr, dtype=np.float64)
    w = k.weights
    for axis in (-3, -2, -1):
        out = ndimage.correlate1d(out, w, axis=axis, mode="nearest")
    return out


def gaussian_blur(v, k: KernelSpec = BOUNDARY_KERNEL):
    """Blur a :class:`Volume` or :class:`SoftLabelVolume` (per channel)."""
    if isinstance(v, SoftLabelVolume):
        return SoftLabelVolume(blur_array(v.data, k), v.spacing)
    return Volume(blur_array(v.data, k), v.spacing)


def spatial_gradient(v: Volume):
    """Central differences inside, one-sided at the borders; intensity per voxel.

    Returns
    -------
    tuple of three :class:`Volume`
        Derivatives along x, y and z.
    """
    if any(d < 2 for d in v.dims):
        raise DimensionMismatchError(f"spatial_gradient needs every dim >= 2, got {v.dims}")
    grads = np.gradient(v.data, edge_order=1)
    return tuple(Volume(g, v.spacing) for g in grads)
