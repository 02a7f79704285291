"""scikit-learn style front end for pairwise registration."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import TERMS, HistogramSpec, RegistrationConfig
from .metrics import evaluate_case
from .optimizer import register_pair
from .resample import warp, warp_nearest
from .validation import check_full_field, check_labels, check_same_grid, check_volume
from .volume_core import LabelMap


class HybridRegistration(TransformerMixin, BaseEstimator):
    """Deformable registration of one moving image onto one fixed image.

    ``fit`` estimates the field; ``transform`` resamples any image or label
    map defined on the moving grid onto the fixed grid. Constructor
    arguments mirror :class:`~hybridreg.config.RegistrationConfig`.

    Attributes
    ----------
    field_half_ : DisplacementField
    field_full_ : DisplacementField
    history_ : list of HistoryEntry
    """

    def __init__(self, lambda_=0.8, steps_per_level=(200, 150, 100), learning_rate=0.05,
                 pyramid_levels=3, terms=TERMS, bins=32, parzen_sigma=1.0,
                 beta1=0.9, beta2=0.999, eps=1e-8, pyramid_sigma=1.0,
                 patience=None, min_delta=0.0, seed=0):
        self.lambda_ = lambda_
        self.steps_per_level = steps_per_level
        self.learning_rate = learning_rate
        self.pyramid_levels = pyramid_levels
        self.terms = terms
        self.bins = bins
        self.parzen_sigma = parzen_sigma
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.pyramid_sigma = pyramid_sigma
        self.patience = patience
        self.min_delta = min_delta
        self.seed = seed

    def to_config(self) -> RegistrationConfig:
        p = self.get_params()
        hist = HistogramSpec(p.pop("bins"), p.pop("parzen_sigma"))
        return RegistrationConfig(histogram=hist, **p)

    @classmethod
    def from_config(cls, cfg: RegistrationConfig) -> "HybridRegistration":
        d = cfg.to_dict()
        d["lambda_"] = d.pop("lambda")
        hist = d.pop("histogram")
        d["steps_per_level"] = tuple(d["steps_per_level"])
        d["terms"] = tuple(d["terms"])
        return cls(bins=hist["bins"], parzen_sigma=hist["parzen_sigma"], **d)

    def fit(self, X, y, moving_labels=None, fixed_labels=None):
        """Register moving image ``X`` to fixed image ``y``.

        Labels are optional; the boundary term needs both of them.
        """
        moving = check_volume(X, "moving")
        fixed = check_volume(y, "fixed", spacing=moving.spacing)
        ml = check_labels(moving_labels, "moving_labels", moving.spacing)
        fl = check_labels(fixed_labels, "fixed_labels", fixed.spacing)
        check_same_grid(moving, fixed, ml, fl)
        self.field_half_, self.field_full_, self.history_ = register_pair(
            moving, fixed, ml, fl, self.to_config())
        return self

    def transform(self, X):
        """Warp ``X`` onto the fixed grid.

        Label maps use nearest-neighbour sampling, everything else trilinear.
        Bare arrays come back as arrays.
        """
        check_is_fitted(self, "field_full_")
        if isinstance(X, LabelMap):
            return warp_nearest(X, check_full_field(self.field_full_, X.dims))
        as_array = not hasattr(X, "dims")
        v = check_volume(X)
        out = warp(v, check_full_field(self.field_full_, v.dims))
        return out.data if as_array else out

    def fit_transform(self, X, y, moving_labels=None, fixed_labels=None):
        return self.fit(X, y, moving_labels, fixed_labels).transform(X)

    def score(self, moving_labels, fixed_labels):
        """Mean Dice over the fixed map's labels after warping ``moving_labels``."""
        check_is_fitted(self, "field_full_")
        ml = check_labels(moving_labels)
        fl = check_labels(fixed_labels)
        return evaluate_case(self.transform(ml), fl).dice_mean
