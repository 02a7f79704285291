"""Finite-difference checks of the analytic loss gradients.

``size`` is the edge length of the grid being differentiated: the
intensity lattice for ``ssd``/``mi``, the label lattice for ``boundary``
and the half-resolution field for ``grad``/``total`` (whose images are
therefore ``2 * size`` voxels wide).

The trilinear interpolant is only piecewise smooth: its derivative jumps
where a sample coordinate crosses a grid node. Random ``total`` instances
therefore keep every coordinate at least 0.02 voxels from a node so the
central-difference stencil never straddles a kink.
"""

from __future__ import annotations

import numpy as np

from .config import RegistrationConfig
from .loss import (HybridLoss, boundary_terms, mi_terms, regularizer_terms,
                   ssd_terms)
from .volume_core import LabelMap, Volume, one_hot

STEP = 1e-4
NODE_MARGIN = 0.02
THRESHOLDS = {"ssd": 1e-4, "boundary": 1e-4, "grad": 1e-4, "mi": 1e-3, "total": 1e-3}


def central_difference(fun, x, h=STEP):
    """Gradient of scalar ``fun`` at ``x`` by central differences, entry by entry."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.empty_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fun(x)
        flat[i] = keep - h
        down = fun(x)
        flat[i] = keep
        out[i] = (up - down) / (2.0 * h)
    return out.reshape(x.shape)


def relative_error(analytic, numeric) -> float:
    """Largest entry-wise deviation, relative to the gradient's largest entry."""
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-300)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _soft(rng, classes, shape):
    p = rng.uniform(0.05, 1.0, (classes,) + shape)
    return p / p.sum(axis=0)


def instance(term, size=8, seed=0):
    """Random test problem: ``(value_fn, analytic_grad, point)``."""
    rng = np.random.default_rng(seed)
    shape = (size,) * 3
    if term == "ssd":
        a, b = rng.random(shape), rng.random(shape)
        return (lambda x: ssd_terms(x, b)[0]), ssd_terms(a, b)[1], a
    if term == "mi":
        a, b = rng.uniform(0.01, 0.99, shape), rng.uniform(0.01, 0.99, shape)
        cfg = RegistrationConfig()
        return (lambda x: mi_terms(x, b, cfg.histogram)[0]), mi_terms(a, b, cfg.histogram)[1], a
    if term == "boundary":
        w, f = _soft(rng, 2, shape), _soft(rng, 2, shape)
        return (lambda x: boundary_terms(x, f)[0]), boundary_terms(w, f)[1], w
    if term == "grad":
        u = rng.normal(0.0, 1.0, (3,) + shape)
        return (lambda x: regularizer_terms(x)[0]), regularizer_terms(u)[1], u
    if term == "total":
        full = (2 * size,) * 3
        moving, fixed = Volume(rng.random(full)), Volume(rng.random(full))
        ml = LabelMap(rng.integers(0, 3, full), 3)
        fl = LabelMap(rng.integers(0, 3, full), 3)
        loss = HybridLoss(moving, fixed, one_hot(ml), one_hot(fl), RegistrationConfig())
        # integer part in {-1, 0}, fractional part away from the nodes
        u = rng.integers(-1, 1, (3,) + shape) + rng.uniform(NODE_MARGIN, 1 - NODE_MARGIN,
                                                            (3,) + shape)
        return (lambda x: loss(x, with_grad=False).total), loss(u)[1], u
    raise ValueError(f"unknown term {term!r}; choose from {sorted(THRESHOLDS)}")


def check_term(term, size=8, seed=0) -> float:
    """Max relative error between analytic and finite-difference gradients."""
    fun, analytic, point = instance(term, size, seed)
    return relative_error(analytic, central_difference(fun, point))
