"""Small symmetric-matrix helpers shared by the estimators."""

import numpy as np


def symmetrize(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def floor_eigenvalues(cov, floor):
    """Clip the eigenvalues of a symmetric matrix (or stack) from below.

    This is the maximum-likelihood covariance under the constraint
    ``eigenvalues >= floor``, so using it inside an M-step keeps EM monotone.
    Matrices that already satisfy the bound are returned unchanged.
    """
    cov = symmetrize(np.asarray(cov, dtype=float))
    w, v = np.linalg.eigh(cov)
    if np.all(w >= floor):
        return cov
    w = np.maximum(w, floor)
    out = (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)
    return symmetrize(out)


def sqrtm_psd(cov, floor=0.0, inverse=False):
    """Symmetric square root (or inverse square root) of a PSD matrix.

    Eigenvalues are floored at ``floor`` before rooting.
    """
    w, v = np.linalg.eigh(symmetrize(np.asarray(cov, dtype=float)))
    w = np.maximum(w, floor)
    if inverse:
        if np.any(w <= 0):
            raise np.linalg.LinAlgError("inverse square root of a singular matrix")
        r = 1.0 / np.sqrt(w)
    else:
        r = np.sqrt(w)
    return symmetrize((v * r[..., None, :]) @ np.swapaxes(v, -1, -2))


def whitening_recoloring(cov_x, cov_y, floor=0.0):
    """``cov_x^{1/2} cov_y^{-1/2}``; maps covariance ``cov_y`` onto ``cov_x``."""
    return sqrtm_psd(cov_x, floor) @ sqrtm_psd(cov_y, floor, inverse=True)


def relative_frobenius(a, b):
    """``||a - b||_F / ||b||_F``."""
    denom = np.linalg.norm(b)
    diff = np.linalg.norm(np.asarray(a) - np.asarray(b))
    return diff / denom if denom > 0 else diff
