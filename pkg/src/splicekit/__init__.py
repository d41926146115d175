"""Piecewise-linear feature compensation (SPLICE, M-SPLICE, non-stereo and
run-time adapted variants) for noise-robust speech features."""

from .errors import FormatError, ModelMismatchError, NumericalError, SpliceError, UsageError
from .gmm import Gaussian, Gmm, fit_em, fit_em_from, log_density, log_likelihood, posteriors, sample
from .stereo import (
    PiecewiseTransform,
    StereoDataset,
    WeightedMoments,
    accumulate_moments,
    enhance,
    estimate_bias_only,
    estimate_diagonal,
    estimate_msplice,
    estimate_splice,
)
from .nonstereo import (
    CorrespondenceMatrix,
    MllrTransform,
    apply_mllr_means,
    build_clean_gmm,
    correspondence_matrix,
    estimate_global_mllr_mean,
    estimate_nonstereo,
)
from .runtime import AdaptedTransform, adapt_runtime, enhance_adapted

__version__ = "0.1.0"
