"""hybridreg: deformable 3D registration with a hybrid SSD + MI + boundary loss.

The half-resolution displacement field is optimized directly per image
pair. See :func:`register_pair` for the functional entry point and
:class:`HybridRegistration` for the estimator-style one.
"""

__version__ = "0.1.0"

from .config import TERMS, HistogramSpec, RegistrationConfig
from .exceptions import (DimensionMismatchError, FormatError, HybridRegError,
                         LevelMismatchError, NonFiniteError)
from .loss import (HybridLoss, LossReport, boundary_loss, grad_regularizer, mi_loss,
                   parzen_histograms, soften_labels, ssd_loss, total_loss)
from .metrics import (MetricsReport, dice, evaluate_case, hausdorff,
                      jacobian_determinant, sdlogj)
from .nifti_io import read_any, read_nifti, read_raw_json, write_any, write_nifti, write_raw_json
from .optimizer import OptimState, adam_step, early_stop, register_pair
from .resample import (KernelSpec, downsample2, gaussian_blur, spatial_gradient,
                       trilinear_sample, upsample_field2, warp, warp_nearest, warp_soft)
from .synth import GroundTruthField, PhantomSpec, make_pair, make_phantom, make_smooth_field
from .volume_core import (DisplacementField, LabelMap, Level, SoftLabelVolume, Volume,
                          new_volume, normalize_intensities, one_hot)
from .estimator import HybridRegistration

__all__ = [
    "TERMS", "HistogramSpec", "RegistrationConfig",
    "DimensionMismatchError", "FormatError", "HybridRegError", "LevelMismatchError",
    "NonFiniteError",
    "HybridLoss", "LossReport", "boundary_loss", "grad_regularizer", "mi_loss",
    "parzen_histograms", "soften_labels", "ssd_loss", "total_loss",
    "MetricsReport", "dice", "evaluate_case", "hausdorff", "jacobian_determinant", "sdlogj",
    "read_any", "read_nifti", "read_raw_json", "write_any", "write_nifti", "write_raw_json",
    "OptimState", "adam_step", "early_stop", "register_pair",
    "KernelSpec", "downsample2", "gaussian_blur", "spatial_gradient", "trilinear_sample",
    "upsample_field2", "warp", "warp_nearest", "warp_soft",
    "GroundTruthField", "PhantomSpec", "make_pair", "make_phantom", "make_smooth_field",
    "DisplacementField", "LabelMap", "Level", "SoftLabelVolume", "Volume", "new_volume",
    "normalize_intensities", "one_hot",
    "HybridRegistration", "__version__",
]
