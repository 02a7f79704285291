"""Registration settings and their JSON form."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

TERMS = ("intensity", "statistic", "boundary")


@dataclass(frozen=True)
class HistogramSpec:
    """Parzen histogram discretization of the [0, 1] intensity domain.

    ``parzen_sigma`` is in bin units; the kernel is cut off at three sigma.
    """

    bins: int = 32
    parzen_sigma: float = 1.0

    def __post_init__(self):
        if int(self.bins) < 2:
            raise ValueError("histogram needs at least 2 bins")
        if not self.parzen_sigma > 0:
            raise ValueError("parzen_sigma must be positive")
        object.__setattr__(self, "bins", int(self.bins))
        object.__setattr__(self, "parzen_sigma", float(self.parzen_sigma))


@dataclass(frozen=True)
class RegistrationConfig:
    """Optimizer, pyramid and loss-weight settings.

    ``steps_per_level`` lists iteration counts from the coarsest level to
    the finest; a single int applies to every level. ``terms`` selects the
    similarity terms that enter the total (the regularizer is always on and
    weighted by ``lambda_``).
    """

    lambda_: float = 0.8
    steps_per_level: Tuple[int, ...] = (200, 150, 100)
    learning_rate: float = 0.05
    pyramid_levels: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    histogram: HistogramSpec = field(default_factory=HistogramSpec)
    seed: int = 0
    terms: Tuple[str, ...] = TERMS
    pyramid_sigma: float = 1.0
    patience: Optional[int] = None
    min_delta: float = 0.0

    def __post_init__(self):
        levels = int(self.pyramid_levels)
        if levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        steps = self.steps_per_level
        if isinstance(steps, int):
            steps = (steps,) * levels
        steps = tuple(int(s) for s in steps)
        if len(steps) != levels:
            raise ValueError(
                f"steps_per_level has {len(steps)} entries for {levels} pyramid levels")
        if any(s < 0 for s in steps):
            raise ValueError("steps_per_level entries must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.lambda_ < 0:
            raise ValueError("lambda must be non-negative")
        terms = tuple(self.terms)
        unknown = set(terms) - set(TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")
        hist = self.histogram
        if isinstance(hist, dict):
            hist = HistogramSpec(**hist)
        object.__setattr__(self, "pyramid_levels", levels)
        object.__setattr__(self, "steps_per_level", steps)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "histogram", hist)

    def without(self, term: str) -> "RegistrationConfig":
        return replace(self, terms=tuple(t for t in self.terms if t != term))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        d["steps_per_level"] = list(self.steps_per_level)
        d["terms"] = list(self.terms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RegistrationConfig":
        d = dict(d)
        if "lambda" in d:
            d["lambda_"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RegistrationConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
