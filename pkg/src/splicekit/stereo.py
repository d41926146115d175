"""Piecewise-linear compensation estimated from stereo (paired clean/noisy) data.

Every estimator aligns frames with posteriors from the noisy GMM only, then
fits one affine map per mixture. Enhancement is the posterior-weighted sum
of the per-mixture maps applied to the noisy frame.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ModelMismatchError, SpliceWarning, UsageError
from .gmm import as_frames, posteriors, variance_floor
from .linalg import floor_eigenvalues, whitening_recoloring

KINDS = ("splice", "msplice", "diagonal", "bias_only", "nonstereo")
POSTERIOR_FLOOR = 1e-12
# reciprocal condition number below which a noisy covariance counts as singular
RCOND_LIMIT = 1e-12


@dataclass(frozen=True, eq=False)
class StereoDataset:
    """Frame-aligned clean/noisy pairs: row n of ``clean`` belongs to row n of ``noisy``."""

    clean: np.ndarray
    noisy: np.ndarray

    def __post_init__(self):
        x = as_frames(self.clean, "clean")
        y = as_frames(self.noisy, "noisy")
        if x.shape != y.shape:
            raise UsageError(f"stereo sides differ in shape: {x.shape} vs {y.shape}")
        object.__setattr__(self, "clean", x)
        object.__setattr__(self, "noisy", y)

    @property
    def n_frames(self):
        return self.clean.shape[0]

    @property
    def dim(self):
        return self.clean.shape[1]


@dataclass(frozen=True, eq=False)
class WeightedMoments:
    """Posterior-weighted per-mixture statistics of a stereo set.

    ``mass[m]`` is the total posterior mass of mixture m. Covariances are
    central (mean-subtracted) unless ``central`` is False, in which case they
    are raw second moments.
    """

    mass: np.ndarray
    mean_x: np.ndarray
    mean_y: np.ndarray
    cov_x: np.ndarray
    cov_y: np.ndarray
    cov_xy: np.ndarray
    central: bool = True
    floor_x: float = 0.0
    floor_y: float = 0.0

    @property
    def n_components(self):
        return self.mass.shape[0]

    @property
    def dim(self):
        return self.mean_x.shape[1]

    @property
    def low_occupancy(self):
        return self.mass < self.dim


@dataclass(frozen=True, eq=False)
class PiecewiseTransform:
    """Per-mixture affine maps ``x = M_m y + c_m`` tied to an alignment GMM.

    ``clean_means`` holds the clean mixture means needed for run-time bias
    re-estimation; ``cov_x``/``cov_y`` are kept for whitening-based kinds so
    the stored transform can be re-verified. ``status[m]`` is ``"full"``,
    ``"bias_only"`` or ``"identity"`` and records low-occupancy fallbacks.
    """

    kind: str
    matrices: np.ndarray
    biases: np.ndarray
    alignment_model_id: str
    clean_means: np.ndarray = None
    cov_x: np.ndarray = None
    cov_y: np.ndarray = None
    status: tuple = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown transform kind {self.kind!r}")
        mats = np.array(self.matrices, dtype=float)
        bias = np.array(self.biases, dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2] or bias.shape != mats.shape[:2]:
            raise UsageError(f"inconsistent transform shapes {mats.shape} / {bias.shape}")
        if not (np.all(np.isfinite(mats)) and np.all(np.isfinite(bias))):
            raise UsageError("transform contains non-finite values")
        m, d, _ = mats.shape
        eye = np.eye(d)
        if self.kind == "bias_only" and not np.all(mats == eye):
            raise UsageError("bias_only transforms must have identity matrices")
        if self.kind == "diagonal" and np.any(mats * (1 - eye) != 0):
            raise UsageError("diagonal transforms must have zero off-diagonal entries")
        for name in ("clean_means", "cov_x", "cov_y"):
            val = getattr(self, name)
            if val is not None:
                val = np.array(val, dtype=float)
                val.setflags(write=False)
                object.__setattr__(self, name, val)
        status = tuple(self.status) if self.status is not None else ("full",) * m
        if len(status) != m:
            raise UsageError("status must have one entry per mixture")
        mats.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "biases", bias)
        object.__setattr__(self, "status", status)

    @property
    def n_components(self):
        return self.matrices.shape[0]

    @property
    def dim(self):
        return self.matrices.shape[1]


def _check_model(stereo, gmm):
    if stereo.dim != gmm.dim:
        raise UsageError(f"data dimension {stereo.dim} != model dimension {gmm.dim}")


def _alignments(gmm, frames):
    p = posteriors(gmm, frames)
    p[p < POSTERIOR_FLOOR] = 0.0
    return p / p.sum(axis=1, keepdims=True)


def accumulate_moments(stereo, noisy_gmm, central=True, post=None):
    """Posterior-weighted means and covariances of both stereo streams.

    Alignments come from the noisy GMM only. ``post`` may supply precomputed
    N x M alignments.
    """
    _check_model(stereo, noisy_gmm)
    x, y = stereo.clean, stereo.noisy
    p = _alignments(noisy_gmm, y) if post is None else np.asarray(post, dtype=float)
    mass = p.sum(axis=0)
    n_mix, d = noisy_gmm.n_components, stereo.dim
    floor_x, floor_y = variance_floor(x), variance_floor(y)
    mean_x = np.zeros((n_mix, d))
    mean_y = np.zeros((n_mix, d))
    cov_x = np.repeat(np.eye(d)[None] * floor_x, n_mix, axis=0)
    cov_y = np.repeat(np.eye(d)[None] * floor_y, n_mix, axis=0)
    cov_xy = np.zeros((n_mix, d, d))
    for m in range(n_mix):
        if mass[m] <= 0:
            continue
        w = p[:, m]
        mean_x[m] = w @ x / mass[m]
        mean_y[m] = w @ y / mass[m]
        dx = x - mean_x[m] if central else x
        dy = y - mean_y[m] if central else y
        wdx = w[:, None] * dx
        cov_x[m] = floor_eigenvalues(wdx.T @ dx / mass[m], floor_x)
        cov_y[m] = floor_eigenvalues((w[:, None] * dy).T @ dy / mass[m], floor_y)
        cov_xy[m] = wdx.T @ dy / mass[m]
    return WeightedMoments(mass, mean_x, mean_y, cov_x, cov_y, cov_xy, central, floor_x, floor_y)


def splice_parameters(mean_x, mean_y, cov_xy, cov_y):
    """MMSE regression map: ``A = cov_xy cov_y^-1``, ``b = mean_x - A mean_y``."""
    a = np.linalg.solve(cov_y, cov_xy.T).T
    return a, mean_x - a @ mean_y


def msplice_parameters(mean_x, mean_y, cov_x, cov_y, floor=0.0):
    """Whitening/recolouring map: ``C = cov_x^{1/2} cov_y^{-1/2}``, ``d = mean_x - C mean_y``."""
    c = whitening_recoloring(cov_x, cov_y, floor)
    return c, mean_x - c @ mean_y


def _is_singular(cov, floor):
    # a covariance whose smallest eigenvalue sits on the floor was rank deficient
    w = np.linalg.eigvalsh(cov)
    return w[0] <= max(floor * (1 + 1e-9), RCOND_LIMIT * w[-1])


def _fallback_status(mass, dim):
    if mass < 1:
        return "identity"
    if mass < dim:
        return "bias_only"
    return "full"


def _estimate(mom, solve):
    n_mix, d = mom.n_components, mom.dim
    mats = np.repeat(np.eye(d)[None], n_mix, axis=0)
    biases = np.zeros((n_mix, d))
    status = []
    for m in range(n_mix):
        st = _fallback_status(mom.mass[m], d)
        if st == "bias_only":
            warnings.warn(f"mixture {m}: occupancy {mom.mass[m]:.3g} < {d}, using bias-only map",
                          SpliceWarning)
        elif st == "identity":
            warnings.warn(f"mixture {m}: occupancy {mom.mass[m]:.3g} < 1, using identity map",
                          SpliceWarning)
        elif _is_singular(mom.cov_y[m], mom.floor_y):
            warnings.warn(f"mixture {m}: singular noisy covariance, using bias-only map", SpliceWarning)
            st = "bias_only"
        if st == "full":
            mats[m], biases[m] = solve(m)
        elif st == "bias_only":
            biases[m] = mom.mean_x[m] - mom.mean_y[m]
        status.append(st)
    return mats, biases, tuple(status)


def estimate_splice(stereo, noisy_gmm, central=True, moments=None):
    """Conventional SPLICE: per-mixture MMSE regression of clean on noisy.

    With ``central=False`` the raw (uncentred) second moments are used in
    place of covariances, which no longer equals the weighted least-squares
    solution; it is kept for comparison only.
    """
    mom = moments if moments is not None else accumulate_moments(stereo, noisy_gmm, central)
    mats, biases, status = _estimate(
        mom, lambda m: splice_parameters(mom.mean_x[m], mom.mean_y[m], mom.cov_xy[m], mom.cov_y[m]))
    return PiecewiseTransform("splice", mats, biases, noisy_gmm.model_id,
                              clean_means=mom.mean_x, status=status)


def estimate_msplice(stereo, noisy_gmm, central=True, moments=None):
    """M-SPLICE: per-mixture whitening of the noisy stream recoloured to the clean one.

    The cross-covariance is never used, so ``C_m Sigma_y C_m^T = Sigma_x``
    holds exactly (up to rounding) for every mixture.
    """
    mom = moments if moments is not None else accumulate_moments(stereo, noisy_gmm, central)
    mats, biases, status = _estimate(
        mom, lambda m: msplice_parameters(mom.mean_x[m], mom.mean_y[m], mom.cov_x[m], mom.cov_y[m]))
    return PiecewiseTransform("msplice", mats, biases, noisy_gmm.model_id, clean_means=mom.mean_x,
                              cov_x=mom.cov_x, cov_y=mom.cov_y, status=status)


def estimate_bias_only(stereo, noisy_gmm, moments=None):
    mom = moments if moments is not None else accumulate_moments(stereo, noisy_gmm)
    n_mix, d = mom.n_components, mom.dim
    biases = np.where((mom.mass >= 1)[:, None], mom.mean_x - mom.mean_y, 0.0)
    status = tuple("bias_only" if g >= 1 else "identity" for g in mom.mass)
    return PiecewiseTransform("bias_only", np.repeat(np.eye(d)[None], n_mix, axis=0), biases,
                              noisy_gmm.model_id, clean_means=mom.mean_x, status=status)


def estimate_diagonal(stereo, noisy_gmm, central=True, moments=None):
    """Per-dimension SPLICE: ``scale_c = sigma_xy,c / sigma^2_y,c``; cross terms dropped."""
    mom = moments if moments is not None else accumulate_moments(stereo, noisy_gmm, central)

    def solve(m):
        scale = np.diagonal(mom.cov_xy[m]) / np.diagonal(mom.cov_y[m])
        return np.diag(scale), mom.mean_x[m] - scale * mom.mean_y[m]

    mats, biases, status = _estimate(mom, solve)
    return PiecewiseTransform("diagonal", mats, biases, noisy_gmm.model_id,
                              clean_means=mom.mean_x, status=status)


def apply_maps(matrices, biases, frames, post):
    """``x_n = sum_m post[n, m] (matrices[m] y_n + biases[m])``."""
    y = frames
    # written as y + sum_m p_m ((M_m - I) y + c_m) so identity maps return y exactly
    eye = np.eye(y.shape[1])
    delta = post @ biases
    for m in range(matrices.shape[0]):
        delta += post[:, m, None] * (y @ (matrices[m] - eye).T)
    return y + delta


def enhance(transform, noisy_gmm, frames, post=None, force=False):
    """Clean a block of noisy frames.

    ``post`` freezes the alignments (N x M) instead of computing them from
    ``noisy_gmm``; with frozen alignments the output is affine in the frames.
    ``force`` skips the check that ``noisy_gmm`` is the transform's alignment model.
    """
    y = as_frames(frames)
    if not force and transform.alignment_model_id != noisy_gmm.model_id:
        raise ModelMismatchError("transform was estimated against a different noisy GMM")
    if y.shape[1] != transform.dim or noisy_gmm.dim != transform.dim:
        raise UsageError(f"frame dimension {y.shape[1]} != transform dimension {transform.dim}")
    if post is None:
        post = posteriors(noisy_gmm, y)
    else:
        post = np.asarray(post, dtype=float)
        if post.shape != (y.shape[0], transform.n_components):
            raise UsageError(f"frozen posteriors have shape {post.shape}")
    return apply_maps(transform.matrices, transform.biases, y, post)


def mse(estimate, reference):
    """Mean squared error per feature element."""
    return float(np.mean((np.asarray(estimate) - np.asarray(reference)) ** 2))
