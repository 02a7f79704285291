"""Hybrid registration loss.

The total objective, evaluated at half resolution, is::

    total = intensity + statistic + boundary + lambda * regularizer

* intensity   -- mean squared intensity difference,
* statistic   -- negative Parzen-window mutual information,
* boundary    -- L1 (summed over classes, averaged over voxels) plus
                 global soft-Dice on blurred one-hot labels,
* regularizer -- mean squared forward differences of the displacement.

Every term returns its value together with the analytic gradient w.r.t.
its direct input; :class:`HybridLoss` chains them back onto the
displacement field through the derivative of the trilinear interpolant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import HistogramSpec, RegistrationConfig
from .exceptions import DimensionMismatchError, NonFiniteError
from .resample import (BOUNDARY_KERNEL, blur_array, block_mean, identity_grid,
                       interpolate)
from .volume_core import (DisplacementField, Level, SoftLabelVolume, Volume, half_dims)

DICE_EPS = 1e-6
_RANGE_SLACK = 1e-6


@dataclass(frozen=True)
class LossReport:
    intensity: float
    statistic: float
    boundary: float
    regularizer: float
    lambda_: float
    total: float

    @classmethod
    def combine(cls, intensity, statistic, boundary, regularizer, lambda_):
        total = intensity + statistic + boundary + lambda_ * regularizer
        return cls(float(intensity), float(statistic), float(boundary),
                   float(regularizer), float(lambda_), float(total))

    def as_row(self):
        return [self.intensity, self.statistic, self.boundary, self.regularizer, self.total]


def _same_dims(a, b):
    if a.shape[-3:] != b.shape[-3:]:
        raise DimensionMismatchError(f"dims {a.shape[-3:]} != {b.shape[-3:]}")


# ---------------------------------------------------------------------------
# intensity

def ssd_terms(a, b):
    _same_dims(a, b)
    r = a - b
    return float(np.mean(r * r)), 2.0 * r / r.size


def ssd_loss(warped: Volume, fixed: Volume):
    """Mean squared difference and its gradient w.r.t. the warped intensities."""
    return ssd_terms(warped.data, fixed.data)


# ---------------------------------------------------------------------------
# statistic

def parzen_weights(values, spec: HistogramSpec, with_grad=False):
    """Per-sample normalized Parzen weights over the histogram bins.

    Intensities in [0, 1] map onto bin coordinates ``z = v * (bins - 1)``.
    The Gaussian window is cut at radius ``3 * sigma`` and tangent-tapered
    in ``d**2`` so it reaches zero with zero slope; this keeps the
    histogram, and so the entropy, continuously differentiable.

    Returns
    -------
    W : ndarray, shape (n_samples, bins)
        Rows sum to one.
    dW : ndarray, same shape, only if ``with_grad``
        Derivative of ``W`` w.r.t. the intensity value.
    """
    nb = spec.bins
    s2 = spec.parzen_sigma ** 2
    r2 = 9.0 * s2
    h_r = np.exp(-r2 / (2.0 * s2))
    z = np.asarray(values, dtype=np.float64).ravel() * (nb - 1)
    d = z[:, None] - np.arange(nb)[None, :]
    sq = d * d
    inside = sq < r2
    g = np.exp(-sq / (2.0 * s2))
    w = np.where(inside, g - h_r + h_r * (sq - r2) / (2.0 * s2), 0.0)
    total = w.sum(axis=1, keepdims=True)
    W = w / total
    if not with_grad:
        return W
    dw = np.where(inside, d * (h_r - g) / s2, 0.0)
    dW = (dw - W * dw.sum(axis=1, keepdims=True)) / total
    return W, dW * (nb - 1)


def _check_unit_range(a, name):
    if a.size and (a.min() < -_RANGE_SLACK or a.max() > 1.0 + _RANGE_SLACK):
        raise ValueError(f"{name} intensities must lie in [0, 1] for the MI histogram")


def _entropy(p):
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def _histograms(a, b, spec):
    Wa = parzen_weights(a, spec)
    Wb = parzen_weights(b, spec)
    joint = Wa.T @ Wb / Wa.shape[0]
    return joint.sum(axis=1), joint.sum(axis=0), joint


def parzen_histograms(a: Volume, b: Volume, spec: HistogramSpec = HistogramSpec()):
    """Marginal and joint intensity distributions of two images.

    Returns
    -------
    marginal_a, marginal_b : ndarray, shape (bins,)
    joint : ndarray, shape (bins, bins)
        Sums to one; rows index ``a``'s bins.
    """
    _same_dims(a.data, b.data)
    _check_unit_range(a.data, "first")
    _check_unit_range(b.data, "second")
    return _histograms(a.data, b.data, spec)


def mi_terms(a, b, spec: HistogramSpec):
    _same_dims(a, b)
    _check_unit_range(a, "warped")
    _check_unit_range(b, "fixed")
    Wa, dWa = parzen_weights(a, spec, with_grad=True)
    Wb = parzen_weights(b, spec)
    n = Wa.shape[0]
    joint = Wa.T @ Wb / n
    pa, pb = joint.sum(axis=1), joint.sum(axis=0)
    mi = _entropy(pa) + _entropy(pb) - _entropy(joint)
    # d(-MI)/d joint; the fixed marginal does not move with a
    support = joint > 0
    coef = np.zeros_like(joint)
    coef[support] = (np.log(np.broadcast_to(pa[:, None], joint.shape)[support])
                     - np.log(joint[support]))
    grad = np.sum(dWa * (Wb @ coef.T), axis=1) / n
    return -mi, grad.reshape(a.shape)


def mi_loss(warped: Volume, fixed: Volume, spec: HistogramSpec = HistogramSpec()):
    """Negative mutual information and its gradient w.r.t. the warped intensities.

    Natural-log entropies of the Parzen histograms; minimizing the value
    maximizes MI.
    """
    return mi_terms(warped.data, fixed.data, spec)


# ---------------------------------------------------------------------------
# boundary

def boundary_terms(w, f):
    if w.shape != f.shape:
        raise DimensionMismatchError(f"soft label shapes differ: {w.shape} vs {f.shape}")
    diff = w - f
    n_vox = diff[0].size
    l1 = float(np.sum(np.abs(diff))) / n_vox
    g_l1 = np.sign(diff) / n_vox
    inter = float(np.sum(w * f))
    denom = float(np.sum(w) + np.sum(f)) + DICE_EPS
    dice = 1.0 - 2.0 * inter / denom
    g_dice = -2.0 * f / denom + 2.0 * inter / denom ** 2
    return l1 + dice, g_l1 + g_dice


def boundary_loss(warped_soft: SoftLabelVolume, fixed_soft: SoftLabelVolume):
    """L1 distance plus ``1 - soft Dice`` of two class-probability maps.

    The L1 part sums ``|w - f|`` over classes and averages over voxels, so
    it lies in [0, 2]. The Dice part is global over voxels and classes.
    """
    if warped_soft.num_classes != fixed_soft.num_classes:
        raise DimensionMismatchError(
            f"class counts differ: {warped_soft.num_classes} vs {fixed_soft.num_classes}")
    return boundary_terms(warped_soft.data, fixed_soft.data)


# ---------------------------------------------------------------------------
# regularizer

def regularizer_terms(u):
    if any(n < 2 for n in u.shape[1:]):
        raise DimensionMismatchError(f"regularizer needs every dim >= 2, got {u.shape[1:]}")
    value = 0.0
    grad = np.zeros_like(u)
    for axis in (1, 2, 3):
        diff = np.diff(u, axis=axis)
        count = diff[0].size
        value += float(np.sum(diff * diff)) / count
        g = 2.0 * diff / (9.0 * count)
        lo = [(0, 0)] * 4
        hi = [(0, 0)] * 4
        lo[axis] = (1, 0)
        hi[axis] = (0, 1)
        grad += np.pad(g, lo) - np.pad(g, hi)
    return value / 9.0, grad


def grad_regularizer(f: DisplacementField):
    """Mean squared forward difference of each component along each axis."""
    return regularizer_terms(f.components)


# ---------------------------------------------------------------------------
# assembled objective

def soften_labels(soft: SoftLabelVolume) -> np.ndarray:
    """Half-resolution blurred class maps: block-average each channel, then blur."""
    return blur_array(block_mean(soft.data), BOUNDARY_KERNEL)


class HybridLoss:
    """Total loss of one image pair, with inputs prepared once.

    Parameters
    ----------
    moving, fixed : Volume
        Full-resolution images with intensities in [0, 1]. They are block
        downsampled by 2 here; the field lives on that half grid.
    moving_labels, fixed_labels : SoftLabelVolume, optional
        One-hot (or soft) labels at full resolution. The boundary term is
        skipped when either is missing.
    cfg : RegistrationConfig, optional
    """

    def __init__(self, moving: Volume, fixed: Volume,
                 moving_labels: Optional[SoftLabelVolume] = None,
                 fixed_labels: Optional[SoftLabelVolume] = None,
                 cfg: Optional[RegistrationConfig] = None):
        cfg = cfg or RegistrationConfig()
        if moving.dims != fixed.dims:
            raise DimensionMismatchError(f"moving {moving.dims} != fixed {fixed.dims}")
        self.cfg = cfg
        self.image_dims = moving.dims
        self.dims = half_dims(moving.dims)
        self.moving = block_mean(moving.data)
        self.fixed = block_mean(fixed.data)
        self.grid = identity_grid(self.dims)
        self.terms = set(cfg.terms)
        self.moving_soft = self.fixed_soft = None
        if moving_labels is not None and fixed_labels is not None:
            for lab in (moving_labels, fixed_labels):
                if lab.dims != moving.dims:
                    raise DimensionMismatchError(
                        f"label dims {lab.dims} != image dims {moving.dims}")
            if moving_labels.num_classes != fixed_labels.num_classes:
                raise DimensionMismatchError("moving and fixed label class counts differ")
            self.moving_soft = soften_labels(moving_labels)
            self.fixed_soft = soften_labels(fixed_labels)
        else:
            self.terms.discard("boundary")

    def __call__(self, u, with_grad=True):
        """Evaluate at half-grid displacement components ``u`` (3, nx, ny, nz)."""
        u = np.asarray(getattr(u, "components", u), dtype=np.float64)
        if u.shape != (3,) + self.dims:
            raise DimensionMismatchError(
                f"field shape {u.shape} does not match half grid {(3,) + self.dims}")
        coords = self.grid + u
        grad = np.zeros_like(u)
        intensity = statistic = boundary = 0.0

        if self.terms & {"intensity", "statistic"}:
            warped, dwarped = interpolate(self.moving, coords, with_grad=True)
            g_img = np.zeros(self.dims)
            if "intensity" in self.terms:
                intensity, g = ssd_terms(warped, self.fixed)
                g_img += g
            if "statistic" in self.terms:
                statistic, g = mi_terms(np.clip(warped, 0.0, 1.0), self.fixed,
                                        self.cfg.histogram)
                g_img += g
            grad += g_img * dwarped

        if "boundary" in self.terms:
            raw, draw = interpolate(self.moving_soft, coords, with_grad=True)
            total = raw.sum(axis=0)
            norm = total > 1e-6
            scale = np.where(norm, total, 1.0)
            soft = raw / scale
            boundary, g = boundary_terms(soft, self.fixed_soft)
            # back through the per-voxel renormalization
            g = np.where(norm, (g - np.sum(g * soft, axis=0)) / scale, g)
            grad += np.einsum("c...,ac...->a...", g, draw)

        regularizer, g = regularizer_terms(u)
        grad += self.cfg.lambda_ * g

        report = LossReport.combine(intensity, statistic, boundary, regularizer,
                                    self.cfg.lambda_)
        if not np.isfinite(report.total):
            raise NonFiniteError(f"non-finite loss: {report}")
        return (report, grad) if with_grad else report


def total_loss(moving: Volume, fixed: Volume,
               moving_labels: Optional[SoftLabelVolume],
               fixed_labels: Optional[SoftLabelVolume],
               f: DisplacementField, cfg: Optional[RegistrationConfig] = None):
    """Hybrid loss and its gradient w.r.t. the half-level field ``f``.

    ``moving`` and ``fixed`` are the original full-resolution images.
    """
    if f.level is not Level.HALF:
        raise DimensionMismatchError("total_loss expects a half-level field")
    loss = HybridLoss(moving, fixed, moving_labels, fixed_labels, cfg)
    return loss(f.components)
