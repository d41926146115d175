"""Run-time environment adaptation of a trained transform.

A global MLLR mean transform is estimated on a batch of test frames from one
condition; the adapted noisy means then replace the training ones in the
bias term. The per-mixture matrices are never touched and no decoding pass
is needed.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ModelMismatchError, SpliceWarning, UsageError
from .gmm import as_frames, posteriors
from .nonstereo import MllrTransform, apply_mllr_means, estimate_global_mllr_mean
from .stereo import PiecewiseTransform, apply_maps


@dataclass(frozen=True, eq=False)
class AdaptedTransform:
    base: PiecewiseTransform
    adapted_biases: np.ndarray
    mllr: MllrTransform
    condition_tag: str = ""

    def __post_init__(self):
        b = np.array(self.adapted_biases, dtype=float)
        if b.shape != self.base.biases.shape:
            raise UsageError(f"adapted biases have shape {b.shape}, expected {self.base.biases.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "adapted_biases", b)

    @property
    def kind(self):
        return self.base.kind

    @property
    def matrices(self):
        return self.base.matrices

    @property
    def biases(self):
        return self.adapted_biases

    @property
    def alignment_model_id(self):
        return self.base.alignment_model_id

    @property
    def n_components(self):
        return self.base.n_components

    @property
    def dim(self):
        return self.base.dim


def adapted_biases(matrices, clean_means, adapted_noisy_means):
    """``d_m = mu_x,m - M_m mu_y,m^(a)`` for every mixture."""
    return clean_means - np.einsum("mij,mj->mi", matrices, adapted_noisy_means)


def adapt_runtime(base, noisy_gmm, test_frames, tag="", clean_means=None, cycles=1, force=False):
    """Re-estimate the biases of ``base`` for the condition the test frames come from.

    ``clean_means`` defaults to the clean mixture means stored with the
    transform at training time. The MLLR E-step aligns against the unadapted
    ``noisy_gmm``; one cycle by default. Mixtures that fell back to the
    identity map during training keep their base bias.
    """
    if not force and base.alignment_model_id != noisy_gmm.model_id:
        raise ModelMismatchError("transform was estimated against a different noisy GMM")
    if clean_means is None:
        clean_means = base.clean_means
    if clean_means is None:
        raise UsageError("transform carries no clean means; pass clean_means explicitly")
    clean_means = np.asarray(clean_means, dtype=float)
    if clean_means.shape != base.biases.shape:
        raise UsageError(f"clean means have shape {clean_means.shape}, expected {base.biases.shape}")
    y = as_frames(test_frames, "test_frames")
    mllr = estimate_global_mllr_mean(noisy_gmm, y, cycles)
    biases = adapted_biases(base.matrices, clean_means, mllr.apply(noisy_gmm.means))
    keep = np.array([s == "identity" for s in base.status])
    biases[keep] = base.biases[keep]
    return AdaptedTransform(base, biases, mllr, tag)


def enhance_adapted(adapted, noisy_gmm, frames, tag=None, use_adapted_gmm=False, force=False):
    """Enhance with the adapted biases.

    Alignments come from the original (unadapted) noisy GMM unless
    ``use_adapted_gmm`` is set. Passing a ``tag`` different from the
    transform's condition tag is allowed but warns.
    """
    y = as_frames(frames)
    if not force and adapted.alignment_model_id != noisy_gmm.model_id:
        raise ModelMismatchError("transform was estimated against a different noisy GMM")
    if y.shape[1] != adapted.dim:
        raise UsageError(f"frame dimension {y.shape[1]} != transform dimension {adapted.dim}")
    if tag is not None and tag != adapted.condition_tag:
        warnings.warn(f"applying transform adapted to condition {adapted.condition_tag!r} "
                      f"to frames from condition {tag!r}", SpliceWarning)
    gmm = apply_mllr_means(noisy_gmm, adapted.mllr) if use_adapted_gmm else noisy_gmm
    return apply_maps(adapted.matrices, adapted.adapted_biases, y, posteriors(gmm, y))
