"""Per-pair optimization of the half-resolution displacement field.

The field starts at zero on the coarsest pyramid level, is refined with
Adam on the hybrid loss at each level, and is upsampled (values doubled)
to seed the next finer one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional

import numpy as np

from .config import RegistrationConfig
from .exceptions import DimensionMismatchError, NonFiniteError
from .loss import HybridLoss, LossReport
from .resample import KernelSpec, block_mean, blur_array, upsample_field2
from .volume_core import (DisplacementField, LabelMap, Level, SoftLabelVolume, Volume,
                     half_dims, normalize_intensities, one_hot)

logger = logging.getLogger(__name__)


class HistoryEntry(NamedTuple):
    step: int
    level: int
    report: LossReport
    best_total: float


@dataclass
class OptimState:
    """Adam state for one field; ``m`` and ``v`` are the moment lattices."""

    field: DisplacementField
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    history: List[LossReport] = field(default_factory=list)

    @classmethod
    def start(cls, f: DisplacementField) -> "OptimState":
        return cls(f, np.zeros_like(f.components), np.zeros_like(f.components))


def _adam_update(u, m, v, t, grad, cfg):
    """In-place Adam step ``t`` (1-based) on ``u``."""
    m *= cfg.beta1
    m += (1.0 - cfg.beta1) * grad
    v *= cfg.beta2
    v += (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    u -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


def _check_grad(grad):
    bad = ~np.isfinite(grad)
    if bad.any():
        first = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NonFiniteError(
            f"{int(bad.sum())} non-finite gradient entries (first at index {first})")


def adam_step(state: OptimState, grad, cfg: RegistrationConfig) -> OptimState:
    """One bias-corrected Adam update; returns a new state."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.field.components.shape:
        raise DimensionMismatchError(
            f"gradient shape {grad.shape} != field shape {state.field.components.shape}")
    _check_grad(grad)
    u = state.field.components.copy()
    m, v = state.m.copy(), state.v.copy()
    t = state.step + 1
    _adam_update(u, m, v, t, grad, cfg)
    f = DisplacementField(u, state.field.spacing, state.field.level)
    return OptimState(f, m, v, t, list(state.history))


def early_stop(history, patience: int, min_delta: float = 0.0) -> bool:
    """True once the best total has not improved by ``min_delta`` for ``patience`` steps.

    ``history`` holds totals or :class:`LossReport` objects.
    """
    totals = [getattr(h, "total", h) for h in history]
    if not totals or patience is None or patience < 1:
        return False
    best = totals[0]
    last_improvement = 0
    for i, value in enumerate(totals[1:], start=1):
        if value < best - min_delta:
            best = value
            last_improvement = i
    return len(totals) - 1 - last_improvement >= patience


def _smooth_down(arr, kernel):
    return block_mean(blur_array(arr, kernel))


def build_pyramid(moving, fixed, moving_soft, fixed_soft, levels, sigma=1.0):
    """Per-level inputs, finest first.

    Coarser images are Gaussian pre-smoothed then block-downsampled; label
    channels are block-averaged. Levels that would leave a half grid
    smaller than 2 voxels on any axis are dropped.
    """
    kernel = KernelSpec.for_sigma(sigma)
    pyramid = [(moving, fixed, moving_soft, fixed_soft)]
    for _ in range(levels - 1):
        m, f, ms, fs = pyramid[-1]
        if any(d < 2 for d in half_dims(half_dims(m.dims))):
            break
        spacing = tuple(2 * s for s in m.spacing)
        m = Volume(_smooth_down(m.data, kernel), spacing)
        f = Volume(_smooth_down(f.data, kernel), spacing)
        if ms is not None:
            ms = SoftLabelVolume(block_mean(ms.data), spacing)
            fs = SoftLabelVolume(block_mean(fs.data), spacing)
        pyramid.append((m, f, ms, fs))
    return pyramid


def _check_inputs(moving, fixed, moving_labels, fixed_labels):
    if moving.dims != fixed.dims:
        raise DimensionMismatchError(f"moving dims {moving.dims} != fixed dims {fixed.dims}")
    if not np.allclose(moving.spacing, fixed.spacing):
        raise DimensionMismatchError(
            f"moving spacing {moving.spacing} != fixed spacing {fixed.spacing}")
    if any(d < 2 for d in half_dims(moving.dims)):
        raise DimensionMismatchError(f"images of dims {moving.dims} are too small to register")
    for lab in (moving_labels, fixed_labels):
        if lab is not None and lab.dims != moving.dims:
            raise DimensionMismatchError(f"label dims {lab.dims} != image dims {moving.dims}")


def register_pair(moving: Volume, fixed: Volume,
                  moving_labels: Optional[LabelMap] = None,
                  fixed_labels: Optional[LabelMap] = None,
                  cfg: Optional[RegistrationConfig] = None, callback=None):
    """Estimate the displacement aligning ``moving`` to ``fixed``.

    Intensities are normalized to [0, 1] first. Without both label maps the
    boundary term is dropped. At every level the field with the lowest
    total loss seen is kept and passed on.

    Parameters
    ----------
    callback : callable, optional
        Called with each :class:`HistoryEntry`.

    Returns
    -------
    half : DisplacementField
        Half-resolution field (voxels of the half grid).
    full : DisplacementField
        The same field upsampled onto the image grid.
    history : list of HistoryEntry
    """
    cfg = cfg or RegistrationConfig()
    _check_inputs(moving, fixed, moving_labels, fixed_labels)
    if (moving_labels is None) != (fixed_labels is None):
        logger.warning("only one label map given; boundary term dropped")
    if moving_labels is not None and fixed_labels is not None:
        n = max(moving_labels.num_classes, fixed_labels.num_classes)
        moving_soft = one_hot(LabelMap(moving_labels.labels, n, moving_labels.spacing))
        fixed_soft = one_hot(LabelMap(fixed_labels.labels, n, fixed_labels.spacing))
    else:
        moving_soft = fixed_soft = None

    pyramid = build_pyramid(normalize_intensities(moving), normalize_intensities(fixed),
                            moving_soft, fixed_soft, cfg.pyramid_levels, cfg.pyramid_sigma)
    if len(pyramid) < cfg.pyramid_levels:
        logger.warning("images too small for %d pyramid levels; using %d",
                       cfg.pyramid_levels, len(pyramid))
    steps = cfg.steps_per_level[cfg.pyramid_levels - len(pyramid):]

    history: List[HistoryEntry] = []
    u = None
    for depth in range(len(pyramid) - 1, -1, -1):
        m, f, ms, fs = pyramid[depth]
        dims = half_dims(m.dims)
        spacing = tuple(2 * s for s in m.spacing)
        if u is None:
            u = np.zeros((3,) + dims)
        else:
            coarse = DisplacementField(u, tuple(2 * s for s in spacing), Level.HALF)
            u = upsample_field2(coarse, dims).components.copy()
        n_steps = steps[len(pyramid) - 1 - depth]
        if n_steps == 0:
            continue
        loss = HybridLoss(m, f, ms, fs, cfg)
        mom, vel = np.zeros_like(u), np.zeros_like(u)
        best_u, best_total = u.copy(), np.inf
        level_totals = []
        for t in range(1, n_steps + 1):
            report, grad = loss(u)
            _check_grad(grad)
            if report.total < best_total:
                best_total = report.total
                best_u = u.copy()
            entry = HistoryEntry(len(history), depth, report, best_total)
            history.append(entry)
            level_totals.append(report.total)
            if callback is not None:
                callback(entry)
            if cfg.patience and early_stop(level_totals, cfg.patience, cfg.min_delta):
                logger.info("level %d stopped early after %d steps", depth, t)
                break
            _adam_update(u, mom, vel, t, grad, cfg)
        u = best_u
        logger.info("level %d: best total %.6g", depth, best_total)

    spacing = tuple(2 * s for s in moving.spacing)
    half = DisplacementField(u, spacing, Level.HALF)
    full = upsample_field2(half, moving.dims)
    return half, full, history
