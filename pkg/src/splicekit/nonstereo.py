"""Non-stereo training: mixture-corresponded clean GMM via global MLLR + EM.

Without stereo pairs there is no cross-covariance, so only the whitening
(M-SPLICE) form of the transform can be estimated. The clean GMM is derived
from the noisy one so that component i of both models describe the same
region of feature space.
"""

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import lstsq
from scipy.optimize import linear_sum_assignment

from .errors import FormatError, SpliceWarning, UsageError
from .gmm import as_frames, fit_em, fit_em_from, posteriors
from .stereo import PiecewiseTransform, msplice_parameters

RIDGE_SCALE = 1e-8


@dataclass(frozen=True, eq=False)
class MllrTransform:
    """Global mean transform ``mu <- W [1, mu]``; ``w`` is D x (D+1)."""

    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 2 or w.shape[1] != w.shape[0] + 1:
            raise UsageError(f"MLLR matrix must be D x (D+1), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise UsageError("MLLR matrix contains non-finite values")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def identity(cls, dim):
        return cls(np.hstack([np.zeros((dim, 1)), np.eye(dim)]))

    @property
    def dim(self):
        return self.w.shape[0]

    @property
    def bias(self):
        return self.w[:, 0]

    @property
    def matrix(self):
        return self.w[:, 1:]

    def apply(self, means):
        return np.asarray(means, dtype=float) @ self.matrix.T + self.bias


def _extended(means):
    return np.hstack([np.ones((means.shape[0], 1)), means])


def _mllr_m_step(gmm, y, post, w_prev, ridge):
    """Exact maximiser of the auxiliary function over W (weights, covariances fixed)."""
    d = gmm.dim
    xi = _extended(gmm.means)                 # M x (D+1)
    mass = post.sum(axis=0)                   # M
    obs = post.T @ y                          # M x D, first-order stats
    if gmm.mode == "diagonal":
        prec = 1.0 / gmm.covariances          # M x D
        w = np.empty_like(w_prev)
        for i in range(d):
            g = np.einsum("m,mj,mk->jk", mass * prec[:, i], xi, xi)
            k = (obs[:, i] * prec[:, i]) @ xi
            w[i] = w_prev[i] + _solve_psd(g, k - g @ w_prev[i], ridge)
        return w
    prec = np.linalg.inv(gmm.covariances)     # M x D x D
    # column-major vec: vec(P W G) = (G^T kron P) vec(W)
    big = np.zeros((d * (d + 1), d * (d + 1)))
    rhs = np.zeros((d, d + 1))
    for m in range(gmm.n_components):
        if mass[m] <= 0:
            continue
        big += mass[m] * np.kron(np.outer(xi[m], xi[m]), prec[m])
        rhs += prec[m] @ np.outer(obs[m], xi[m])
    r = rhs.reshape(-1, order="F") - big @ w_prev.reshape(-1, order="F")
    delta = _solve_psd(big, r, ridge)
    return w_prev + delta.reshape(d, d + 1, order="F")


def _solve_psd(a, b, ridge):
    # minimum-norm update from the previous iterate: exact in the identified
    # directions, zero in the unidentified ones (e.g. fewer mixtures than D+1)
    if ridge:
        a = a + RIDGE_SCALE * np.trace(a) / a.shape[0] * np.eye(a.shape[0])
    return lstsq(a, b, cond=1e-12)[0]


def estimate_global_mllr_mean(gmm, frames, cycles=1):
    """Estimate one global MLLR mean transform maximising the frames' likelihood.

    Each cycle computes alignments under the current adapted model and then
    solves the weighted least-squares problem for W exactly; the first cycle
    aligns against the unadapted ``gmm``. Starting from the identity, the
    adapted log-likelihood never falls below the unadapted one.

    With fewer than D+1 frames the normal equations are ill-posed; a small
    ridge is added and a ``SpliceWarning`` is emitted.
    """
    y = as_frames(frames)
    if y.shape[1] != gmm.dim:
        raise UsageError(f"frame dimension {y.shape[1]} != model dimension {gmm.dim}")
    if cycles < 1:
        raise UsageError("cycles must be >= 1")
    ridge = y.shape[0] < gmm.dim + 1
    if ridge:
        warnings.warn(f"only {y.shape[0]} adaptation frames for a {gmm.dim}-dim MLLR transform; "
                      "using ridge-regularised estimate", SpliceWarning)
    w = MllrTransform.identity(gmm.dim).w.copy()
    current = gmm
    for _ in range(cycles):
        post = posteriors(current, y)
        w = _mllr_m_step(gmm, y, post, w, ridge)
        current = apply_mllr_means(gmm, MllrTransform(w))
    return MllrTransform(w)


def apply_mllr_means(gmm, mllr):
    """Replace every mean by ``W [1, mu]``; weights and covariances untouched."""
    if mllr.dim != gmm.dim:
        raise UsageError(f"MLLR dimension {mllr.dim} != model dimension {gmm.dim}")
    return gmm.replace(means=mllr.apply(gmm.means))


def build_clean_gmm(noisy_gmm, clean_frames, em_iters=3, mllr_cycles=1, history=None):
    """Clean GMM whose component i corresponds to component i of ``noisy_gmm``.

    Global MLLR mean adaptation of the noisy model to the clean data,
    followed by ``em_iters`` (at least three) EM refinements on the clean data.
    """
    if em_iters < 3:
        raise UsageError("at least three EM refinement iterations are required")
    mllr = estimate_global_mllr_mean(noisy_gmm, clean_frames, mllr_cycles)
    adapted = apply_mllr_means(noisy_gmm, mllr)
    return fit_em_from(adapted, clean_frames, em_iters, history)


@dataclass(frozen=True, eq=False)
class CorrespondenceMatrix:
    """Co-assignment mass ``v[i, j]`` of clean mixture i and noisy mixture j."""

    v: np.ndarray
    mode: str
    n_frames: int

    @property
    def total(self):
        return float(self.v.sum())

    def permutation(self):
        """One-to-one clean->noisy matching carrying the most mass."""
        rows, cols = linear_sum_assignment(self.v, maximize=True)
        return rows, cols

    def permutation_mass(self):
        """Fraction of total mass on the best one-to-one matching."""
        rows, cols = self.permutation()
        return float(self.v[rows, cols].sum() / self.total)

    def diagonal_mass(self):
        return float(np.trace(self.v) / self.total)

    def row_argmax_is_permutation(self):
        arg = np.argmax(self.v, axis=1)
        return self.v.shape[0] == self.v.shape[1] and len(set(arg.tolist())) == self.v.shape[0]

    def save(self, path):
        """Plain-text export: ``# M=<rows> mode=<mode> N=<frames>`` then one row per line."""
        with open(path, "w") as f:
            f.write(f"# M={self.v.shape[0]} mode={self.mode} N={self.n_frames}\n")
            for row in self.v:
                f.write(" ".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            header = f.readline().split()
            if not header or header[0] != "#":
                raise FormatError(f"{path}: missing V-matrix header")
            fields = dict(h.split("=", 1) for h in header[1:])
            rows = [[float(v) for v in line.split()] for line in f if line.strip()]
        v = np.array(rows, dtype=float)
        if v.shape[0] != int(fields["M"]):
            raise FormatError(f"{path}: header says M={fields['M']}, found {v.shape[0]} rows")
        return cls(v, fields["mode"], int(fields["N"]))


def correspondence_matrix(clean_gmm, noisy_gmm, stereo, mode="soft"):
    """Clean-vs-noisy mixture co-assignment counts over stereo pairs.

    ``soft``: ``V_ij = sum_n p(i|x_n) p(j|y_n)``; ``hard``: counts of
    (argmax clean mixture, argmax noisy mixture) pairs.
    """
    px = posteriors(clean_gmm, stereo.clean)
    py = posteriors(noisy_gmm, stereo.noisy)
    if mode == "soft":
        v = px.T @ py
    elif mode == "hard":
        mc, mn = px.shape[1], py.shape[1]
        flat = np.argmax(px, axis=1) * mn + np.argmax(py, axis=1)
        v = np.bincount(flat, minlength=mc * mn).reshape(mc, mn).astype(float)
    else:
        raise UsageError(f"unknown correspondence mode {mode!r}")
    return CorrespondenceMatrix(v, mode, stereo.n_frames)


class NonStereoResult(NamedTuple):
    transform: PiecewiseTransform
    noisy_gmm: object
    clean_gmm: object


def nonstereo_transform(noisy_gmm, clean_gmm, n_clean):
    """Whitening maps from each noisy component to the clean component of the same index."""
    d = noisy_gmm.dim
    cov_x, cov_y = clean_gmm.full_covariances, noisy_gmm.full_covariances
    mats = np.repeat(np.eye(d)[None], noisy_gmm.n_components, axis=0)
    biases = np.zeros((noisy_gmm.n_components, d))
    status = []
    for m in range(noisy_gmm.n_components):
        mass = clean_gmm.weights[m] * n_clean
        degenerate = np.linalg.eigvalsh(cov_x[m])[0] <= clean_gmm.floor * (1 + 1e-9)
        if mass < 1:
            warnings.warn(f"mixture {m}: clean occupancy {mass:.3g} < 1, using identity map", SpliceWarning)
            status.append("identity")
        elif mass < d or degenerate:
            warnings.warn(f"mixture {m}: degenerate clean component, using bias-only map", SpliceWarning)
            biases[m] = clean_gmm.means[m] - noisy_gmm.means[m]
            status.append("bias_only")
        else:
            mats[m], biases[m] = msplice_parameters(clean_gmm.means[m], noisy_gmm.means[m], cov_x[m], cov_y[m])
            status.append("full")
    return PiecewiseTransform("nonstereo", mats, biases, noisy_gmm.model_id, clean_means=clean_gmm.means,
                              cov_x=cov_x, cov_y=cov_y, status=tuple(status))


def estimate_nonstereo(noisy_frames, clean_frames, m, em_iters=3, noisy_iters=10, seed=0,
                       mode="full", mllr_cycles=1, noisy_gmm=None):
    """Train transforms from unpaired clean and noisy corpora.

    The two corpora may differ in size. Returns ``(transform, noisy_gmm,
    clean_gmm)``; the noisy GMM is the alignment model at test time.
    """
    y = as_frames(noisy_frames, "noisy_frames")
    x = as_frames(clean_frames, "clean_frames")
    if noisy_gmm is None:
        noisy_gmm = fit_em(y, m, iters=noisy_iters, seed=seed, mode=mode)
    clean_gmm = build_clean_gmm(noisy_gmm, x, em_iters, mllr_cycles)
    return NonStereoResult(nonstereo_transform(noisy_gmm, clean_gmm, x.shape[0]), noisy_gmm, clean_gmm)
