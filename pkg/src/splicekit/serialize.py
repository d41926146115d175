"""JSON model files for GMMs and transforms.

Floats are written with ``repr`` so every value round-trips exactly. GMM
file keys: ``format`` ("splicekit-gmm"), ``version``, ``mode``, ``M``,
``D``, ``floor``, ``weights`` (M), ``means`` (M x D), ``covariances``
(M x D x D, or M x D variances in diagonal mode).

Transform file keys: ``format`` ("splicekit-transform"), ``version``,
``kind``, ``M``, ``D``, ``alignment_model_id`` (sha256 of the noisy GMM),
``matrices`` (M x D x D), ``biases`` (M x D), ``status`` (M strings) and,
when available, ``clean_means``, ``cov_x``, ``cov_y``. Adapted transforms add
an ``adaptation`` block with ``condition_tag``, ``mllr`` (D x (D+1)) and
``biases`` (the adapted biases); the top-level ``biases`` stay those of the
base transform.
"""

import json
from pathlib import Path

import numpy as np

from .errors import FormatError, ModelMismatchError
from .gmm import Gmm
from .nonstereo import MllrTransform
from .runtime import AdaptedTransform
from .stereo import PiecewiseTransform

VERSION = 1


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def _load(path, fmt):
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a JSON model file ({exc})") from None
    if not isinstance(obj, dict) or obj.get("format") != fmt:
        raise FormatError(f"{path}: expected a {fmt} file")
    if obj.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported version {obj.get('version')}")
    return obj


def _arr(obj, key, shape, path):
    try:
        a = np.array(obj[key], dtype=float)
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{path}: bad or missing field {key!r}") from exc
    if a.shape != shape:
        raise FormatError(f"{path}: field {key!r} has shape {a.shape}, expected {shape}")
    return a


def gmm_to_dict(gmm):
    return {
        "format": "splicekit-gmm",
        "version": VERSION,
        "mode": gmm.mode,
        "M": gmm.n_components,
        "D": gmm.dim,
        "floor": gmm.floor,
        "weights": gmm.weights.tolist(),
        "means": gmm.means.tolist(),
        "covariances": gmm.covariances.tolist(),
    }


def gmm_from_dict(obj, path="<gmm>"):
    m, d, mode = int(obj["M"]), int(obj["D"]), obj["mode"]
    cov_shape = (m, d, d) if mode == "full" else (m, d)
    return Gmm(_arr(obj, "weights", (m,), path), _arr(obj, "means", (m, d), path),
               _arr(obj, "covariances", cov_shape, path), mode, float(obj.get("floor", 0.0)))


def save_gmm(gmm, path):
    _dump(gmm_to_dict(gmm), path)


def load_gmm(path):
    return gmm_from_dict(_load(path, "splicekit-gmm"), path)


def transform_to_dict(t):
    base = t.base if isinstance(t, AdaptedTransform) else t
    obj = {
        "format": "splicekit-transform",
        "version": VERSION,
        "kind": base.kind,
        "M": base.n_components,
        "D": base.dim,
        "alignment_model_id": base.alignment_model_id,
        "matrices": base.matrices.tolist(),
        "biases": base.biases.tolist(),
        "status": list(base.status),
    }
    for key in ("clean_means", "cov_x", "cov_y"):
        val = getattr(base, key)
        if val is not None:
            obj[key] = val.tolist()
    if isinstance(t, AdaptedTransform):
        obj["adaptation"] = {
            "condition_tag": t.condition_tag,
            "mllr": t.mllr.w.tolist(),
            "biases": t.adapted_biases.tolist(),
        }
    return obj


def transform_from_dict(obj, path="<transform>"):
    m, d = int(obj["M"]), int(obj["D"])
    optional = {}
    for key, shape in (("clean_means", (m, d)), ("cov_x", (m, d, d)), ("cov_y", (m, d, d))):
        if key in obj:
            optional[key] = _arr(obj, key, shape, path)
    base = PiecewiseTransform(obj["kind"], _arr(obj, "matrices", (m, d, d), path),
                              _arr(obj, "biases", (m, d), path), obj["alignment_model_id"],
                              status=tuple(obj.get("status", ("full",) * m)), **optional)
    ad = obj.get("adaptation")
    if ad is None:
        return base
    return AdaptedTransform(base, _arr(ad, "biases", (m, d), path),
                            MllrTransform(_arr(ad, "mllr", (d, d + 1), path)), ad.get("condition_tag", ""))


def save_transform(t, path):
    _dump(transform_to_dict(t), path)


def load_transform(path, gmm=None, force=False):
    """Load a (possibly adapted) transform.

    If ``gmm`` is given, the transform must have been estimated against it
    (same content hash) unless ``force`` is set.
    """
    t = transform_from_dict(_load(path, "splicekit-transform"), path)
    if gmm is not None and not force and t.alignment_model_id != gmm.model_id:
        raise ModelMismatchError(f"{path}: alignment model hash does not match the supplied GMM "
                                 "(use --force to override)")
    return t
