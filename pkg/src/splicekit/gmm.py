"""Gaussian mixture densities: evaluation, posteriors, EM training and sampling.

All density work is done in the log domain; with 128 mixtures and 13
dimensions the linear-domain likelihoods underflow routinely.
"""

import hashlib
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import NumericalError, UsageError
from .linalg import floor_eigenvalues, symmetrize

logger = logging.getLogger(__name__)

MODES = ("full", "diagonal")
FLOOR_SCALE = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


def as_frames(frames, name="frames"):
    """Validate an N x D feature matrix and return it as float64."""
    x = np.asarray(frames, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise UsageError(f"{name} must be a non-empty N x D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise UsageError(f"{name} contains non-finite values")
    return x


def variance_floor(frames):
    """Covariance floor for a data set: 1e-6 times its mean per-dimension variance."""
    v = float(np.mean(np.var(frames, axis=0)))
    return FLOOR_SCALE * v if v > 0 else 1e-12


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    covariance: np.ndarray
    mode: str = "full"

    @property
    def full_covariance(self):
        return np.diag(self.covariance) if self.mode == "diagonal" else self.covariance


@dataclass(frozen=True, eq=False)
class Gmm:
    """Mixture of Gaussians sharing one dimensionality and storage mode.

    ``covariances`` is M x D x D in ``full`` mode and M x D (variances) in
    ``diagonal`` mode. ``floor`` is the eigenvalue/variance floor the model
    was trained with (0 for hand-built models). Instances are immutable.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    mode: str = "full"
    floor: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"unknown covariance mode {self.mode!r}")
        w = _readonly(self.weights).reshape(-1)
        mu = _readonly(self.means)
        if mu.ndim == 1:
            mu = _readonly(mu[:, None]) if w.size > 1 else _readonly(mu[None, :])
        cov = np.array(self.covariances, dtype=float)
        m, d = mu.shape
        if w.size != m or m < 1 or d < 1:
            raise UsageError(f"{w.size} weights for {m} means")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise UsageError("mixture weights must be a probability simplex")
        if self.mode == "full":
            cov = cov.reshape(m, d, d)
            if not np.allclose(cov, np.swapaxes(cov, 1, 2), rtol=1e-12, atol=0):
                raise UsageError("covariances must be symmetric")
            cov = symmetrize(cov)
        else:
            cov = cov.reshape(m, d)
            if np.any(cov <= 0):
                raise UsageError("variances must be positive")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
            raise NumericalError("non-finite GMM parameters")
        cov.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        object.__setattr__(self, "floor", float(self.floor))

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def components(self):
        return [Gaussian(self.means[m], self.covariances[m], self.mode) for m in range(self.n_components)]

    @property
    def full_covariances(self):
        if self.mode == "full":
            return self.covariances
        return np.einsum("md,de->mde", self.covariances, np.eye(self.dim))

    @cached_property
    def model_id(self):
        """Content hash identifying this exact model (used to tie transforms to it)."""
        h = hashlib.sha256(b"splicekit-gmm\0")
        h.update(self.mode.encode())
        for a in (self.weights, self.means, self.covariances):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    @cached_property
    def _cholesky(self):
        if self.mode == "diagonal":
            return np.sqrt(self.covariances)
        chol = np.empty_like(self.covariances)
        for m, c in enumerate(self.covariances):
            try:
                chol[m] = np.linalg.cholesky(c)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"covariance of component {m} is not positive definite") from exc
        return chol

    def replace(self, **changes):
        fields = dict(weights=self.weights, means=self.means, covariances=self.covariances,
                      mode=self.mode, floor=self.floor)
        fields.update(changes)
        return Gmm(**fields)


def component_log_probs(gmm, frames):
    """N x M matrix of ``log pi_m + log N(y_n; mu_m, Sigma_m)``."""
    x = as_frames(frames)
    if x.shape[1] != gmm.dim:
        raise UsageError(f"frame dimension {x.shape[1]} != model dimension {gmm.dim}")
    n, d = x.shape
    out = np.empty((n, gmm.n_components))
    chol = gmm._cholesky
    with np.errstate(divide="ignore"):
        logw = np.log(gmm.weights)
    for m in range(gmm.n_components):
        diff = x - gmm.means[m]
        if gmm.mode == "diagonal":
            z = diff / chol[m]
            logdet = 2.0 * np.sum(np.log(chol[m]))
            maha = np.sum(z * z, axis=1)
        else:
            z = solve_triangular(chol[m], diff.T, lower=True, check_finite=False)
            logdet = 2.0 * np.sum(np.log(np.diag(chol[m])))
            maha = np.sum(z * z, axis=0)
        out[:, m] = logw[m] - 0.5 * (d * LOG_2PI + logdet + maha)
    return out


def frame_log_density(gmm, frames):
    """Per-frame ``log p(y_n)``."""
    return logsumexp(component_log_probs(gmm, frames), axis=1)


def log_density(gmm, frame):
    """``log p(y)`` of a single frame."""
    y = np.asarray(frame, dtype=float)
    if y.ndim != 1:
        raise UsageError("log_density expects a single frame vector")
    if y.shape[0] != gmm.dim:
        raise UsageError(f"frame dimension {y.shape[0]} != model dimension {gmm.dim}")
    return float(frame_log_density(gmm, y[None, :])[0])


def log_likelihood(gmm, frames):
    """Total log-likelihood of a set of frames."""
    return float(np.sum(frame_log_density(gmm, frames)))


def posteriors(gmm, frames):
    """N x M matrix of ``p(m | y_n)``; every row is a probability simplex."""
    lp = component_log_probs(gmm, frames)
    post = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
    return post / post.sum(axis=1, keepdims=True)


def _kmeans_pp(x, m, rng):
    # greedy k-means++: several candidates per step, keep the one that most
    # reduces the potential
    n = x.shape[0]
    trials = 2 + int(np.log(m))
    idx = [int(rng.integers(n))]
    d2 = np.sum((x - x[idx[0]]) ** 2, axis=1)
    for _ in range(1, m):
        total = d2.sum()
        if total <= 0:
            idx.append(int(rng.integers(n)))
            continue
        cand = np.searchsorted(np.cumsum(d2), rng.random(trials) * total)
        cand = np.minimum(cand, n - 1)
        cand_d2 = np.minimum(d2[None, :], np.sum((x[None, :, :] - x[cand][:, None, :]) ** 2, axis=2))
        best = int(np.argmin(cand_d2.sum(axis=1)))
        idx.append(int(cand[best]))
        d2 = cand_d2[best]
    return x[idx]


def _initial_gmm(x, m, init, mode, floor, rng):
    if init == "kmeans++":
        means = _kmeans_pp(x, m, rng)
    elif init == "random":
        means = x[rng.choice(x.shape[0], size=m, replace=False)]
    else:
        raise UsageError(f"unknown init policy {init!r}")
    if mode == "full":
        glob = floor_eigenvalues(np.atleast_2d(np.cov(x, rowvar=False, bias=True)), floor)
        covs = np.repeat(glob[None], m, axis=0)
    else:
        covs = np.repeat(np.maximum(np.var(x, axis=0), floor)[None], m, axis=0)
    return Gmm(np.full(m, 1.0 / m), means, covs, mode, floor)


def _m_step(gmm, x, resp, floor):
    nk = resp.sum(axis=0)
    weights = nk / nk.sum()
    means = np.array(gmm.means)
    covs = np.array(gmm.covariances)
    for m in range(gmm.n_components):
        if nk[m] < 1e-10:
            # dead component: keep its shape, weight goes to ~0
            continue
        r = resp[:, m]
        means[m] = r @ x / nk[m]
        diff = x - means[m]
        if gmm.mode == "full":
            covs[m] = floor_eigenvalues((r[:, None] * diff).T @ diff / nk[m], floor)
        else:
            covs[m] = np.maximum(r @ (diff * diff) / nk[m], floor)
    return gmm.replace(weights=weights, means=means, covariances=covs, floor=floor)


def _run_em(gmm, x, iters, floor, history=None):
    lls = []
    for _ in range(iters):
        lp = component_log_probs(gmm, x)
        ll_frame = logsumexp(lp, axis=1)
        lls.append(float(ll_frame.sum()))
        resp = np.exp(lp - ll_frame[:, None])
        gmm = _m_step(gmm, x, resp, floor)
    lls.append(log_likelihood(gmm, x))
    for i in range(1, len(lls)):
        logger.debug("em iter %d loglik %.10g", i, lls[i])
        if lls[i] < lls[i - 1] - 1e-8:
            logger.warning("EM log-likelihood decreased at iteration %d: %.12g -> %.12g",
                           i, lls[i - 1], lls[i])
    if history is not None:
        history.extend(lls)
    return gmm


def fit_em(frames, m, init="kmeans++", iters=10, seed=0, mode="full", history=None):
    """Train an M-component GMM with a fixed number of EM iterations.

    Parameters
    ----------
    frames : array_like, shape (N, D)
    m : int
        Number of mixtures; must not exceed N.
    init : {"kmeans++", "random"}
        Mean seeding. Covariances start at the global data covariance and
        weights start uniform.
    iters : int
        EM iterations (no tolerance-based stopping).
    seed : int
        Seed for the initialisation; the fit is deterministic given it.
    mode : {"full", "diagonal"}
    history : list, optional
        If given, receives the total log-likelihood before every iteration
        and after the last one (``iters + 1`` values, non-decreasing).
    """
    x = as_frames(frames)
    if m < 1 or x.shape[0] < m:
        raise UsageError(f"need at least {m} frames to fit {m} mixtures, got {x.shape[0]}")
    if iters < 1:
        raise UsageError("iters must be >= 1")
    floor = variance_floor(x)
    gmm = _initial_gmm(x, m, init, mode, floor, np.random.default_rng(seed))
    return _run_em(gmm, x, iters, floor, history)


def fit_em_from(init_gmm, frames, iters, history=None):
    """Refine an existing GMM on new data; component order is preserved."""
    x = as_frames(frames)
    if x.shape[1] != init_gmm.dim:
        raise UsageError(f"frame dimension {x.shape[1]} != model dimension {init_gmm.dim}")
    if iters < 1:
        raise UsageError("iters must be >= 1")
    return _run_em(init_gmm, x, iters, variance_floor(x), history)


def sample(gmm, n, seed=0, return_labels=False):
    """Draw ``n`` i.i.d. frames (and optionally their generating components)."""
    if n < 1:
        raise UsageError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labels = rng.choice(gmm.n_components, size=n, p=gmm.weights)
    z = rng.standard_normal((n, gmm.dim))
    chol = gmm._cholesky
    if gmm.mode == "diagonal":
        x = gmm.means[labels] + z * chol[labels]
    else:
        x = gmm.means[labels] + np.einsum("nij,nj->ni", chol[labels], z)
    return (x, labels) if return_labels else x
