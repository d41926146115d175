"""Synthetic stereo corpora with closed-form ground truth.

Clean frames come from a random GMM with well-separated, correlated
components. Each frame is corrupted by the affine channel of the mixture
that generated it, ``y = G_m x + h_m + e`` with ``e ~ N(0, residual_sigma^2 I)``,
so the ideal noisy->clean map of mixture m is ``(G_m^-1, -G_m^-1 h_m)``.

The default channel is a large global offset plus mild per-mixture matrix
and offset perturbations around the identity.

Spec files are JSON objects whose keys are the fields of
:class:`SyntheticSpec`; ``channel`` is ``"random"``, ``"identity"`` or a
list of ``{"matrix": DxD, "bias": D}`` objects, and ``test_conditions`` is
a list of ``{"tag": str, "shift": float or D-list, "n_frames": int}``.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import UsageError
from .features import FeatureFile, save_features
from .gmm import Gmm, sample
from .linalg import symmetrize
from .manifest import CorpusManifest, Record
from .serialize import gmm_to_dict
from .stereo import StereoDataset

MAX_CONDITION = 1e3


@dataclass
class SyntheticSpec:
    d: int = 13
    m: int = 8
    separation: float = 10.0
    residual_sigma: float = 0.0
    n_frames: int = 50000
    seed: int = 0
    channel: object = "random"
    matrix_jitter: float = 0.1
    global_bias: float = 3.0
    mixture_bias: float = 0.5
    utterance_frames: int = 500
    test_conditions: list = field(default_factory=list)

    def __post_init__(self):
        if self.d < 1 or self.m < 1 or self.n_frames < 1:
            raise UsageError("d, m and n_frames must be positive")
        if not self.separation > 0:
            raise UsageError("separation must be > 0")
        if self.residual_sigma < 0:
            raise UsageError("residual_sigma must be >= 0")
        if self.utterance_frames < 1:
            raise UsageError("utterance_frames must be positive")
        if isinstance(self.channel, str) and self.channel not in ("random", "identity"):
            raise UsageError(f"unknown channel {self.channel!r}")

    @classmethod
    def from_dict(cls, obj):
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown synthetic spec keys: {', '.join(sorted(unknown))}")
        return cls(**obj)

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except FileNotFoundError:
            raise UsageError(f"spec file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None

    def to_dict(self):
        return asdict(self)


class SyntheticCorpus(NamedTuple):
    stereo: StereoDataset
    clean_gmm: Gmm
    channel_matrices: np.ndarray
    channel_biases: np.ndarray
    labels: np.ndarray

    @property
    def oracle_matrices(self):
        return np.linalg.inv(self.channel_matrices)

    @property
    def oracle_biases(self):
        return -np.einsum("mij,mj->mi", self.oracle_matrices, self.channel_biases)

    def noisy_gmm(self, residual_sigma=0.0):
        """Exact density of the noisy stream (before any test shift)."""
        g, h = self.channel_matrices, self.channel_biases
        means = np.einsum("mij,mj->mi", g, self.clean_gmm.means) + h
        covs = g @ self.clean_gmm.covariances @ np.swapaxes(g, 1, 2)
        covs = covs + residual_sigma ** 2 * np.eye(g.shape[1])
        return Gmm(self.clean_gmm.weights, means, symmetrize(covs))


def _random_covariance(rng, d):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eig = rng.uniform(0.2, 1.0, size=d)
    eig[0] = 1.0  # largest standard deviation is exactly one unit
    return symmetrize((q * eig) @ q.T)


def _random_means(rng, m, d, gap):
    scale = 1.2 * gap / np.sqrt(d)
    for _ in range(1000):
        means = rng.standard_normal((m, d)) * scale
        if m == 1:
            return means
        dist = np.linalg.norm(means[:, None] - means[None], axis=2)
        if dist[np.triu_indices(m, 1)].min() >= gap:
            return means
        scale *= 1.02
    raise UsageError("could not place well-separated means")


def random_clean_gmm(rng, m, d, separation):
    covs = np.stack([_random_covariance(rng, d) for _ in range(m)])
    # component std along any direction is at most 1, so the gap is in units of sigma
    means = _random_means(rng, m, d, separation)
    weights = rng.uniform(0.5, 1.5, size=m)
    return Gmm(weights / weights.sum(), means, covs)


def make_channel(spec, rng):
    d, m = spec.d, spec.m
    if isinstance(spec.channel, str):
        if spec.channel == "identity":
            return np.repeat(np.eye(d)[None], m, axis=0), np.zeros((m, d))
        g = np.eye(d) + spec.matrix_jitter * rng.standard_normal((m, d, d)) / np.sqrt(d)
        h = spec.global_bias * rng.standard_normal(d) + spec.mixture_bias * rng.standard_normal((m, d))
    else:
        if len(spec.channel) != m:
            raise UsageError(f"channel lists {len(spec.channel)} maps for {m} mixtures")
        g = np.array([c["matrix"] for c in spec.channel], dtype=float).reshape(m, d, d)
        h = np.array([c["bias"] for c in spec.channel], dtype=float).reshape(m, d)
    cond = np.linalg.cond(g)
    if not np.all(np.isfinite(cond)) or np.any(cond > MAX_CONDITION):
        raise UsageError(f"channel matrix condition number {np.max(cond):.3g} exceeds {MAX_CONDITION:g}")
    return g, h


def _corrupt(rng, x, labels, g, h, sigma):
    y = np.einsum("nij,nj->ni", g[labels], x) + h[labels]
    if sigma > 0:
        y = y + sigma * rng.standard_normal(y.shape)
    return y


def generate(spec):
    """Draw a stereo corpus and its ground truth. Deterministic per ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    clean_gmm = random_clean_gmm(rng, spec.m, spec.d, spec.separation)
    g, h = make_channel(spec, rng)
    x, labels = sample(clean_gmm, spec.n_frames, seed=int(rng.integers(2**32)), return_labels=True)
    y = _corrupt(rng, x, labels, g, h, spec.residual_sigma)
    return SyntheticCorpus(StereoDataset(x, y), clean_gmm, g, h, labels)


def draw_condition(corpus, n, shift=0.0, residual_sigma=0.0, seed=0):
    """Fresh stereo pairs from the same clean GMM and channel, noisy side offset by ``shift``."""
    rng = np.random.default_rng(seed)
    x, labels = sample(corpus.clean_gmm, n, seed=int(rng.integers(2**32)), return_labels=True)
    y = _corrupt(rng, x, labels, corpus.channel_matrices, corpus.channel_biases, residual_sigma)
    return StereoDataset(x, y + np.broadcast_to(np.asarray(shift, dtype=float), y.shape)), labels


class UnpairedSplit(NamedTuple):
    clean: np.ndarray
    noisy: np.ndarray
    clean_index: np.ndarray
    noisy_index: np.ndarray


def split_unpaired(stereo, seed=0):
    """Clean side of one random half and noisy side of the other, no pair shared."""
    n = stereo.n_frames
    if n < 2:
        raise UsageError("need at least two stereo pairs to split")
    perm = np.random.default_rng(seed).permutation(n)
    k = (n + 1) // 2
    ci, ni = np.sort(perm[:k]), np.sort(perm[k:])
    return UnpairedSplit(stereo.clean[ci], stereo.noisy[ni], ci, ni)


def _chunks(n, size):
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def _write_utterances(frames, out_dir, prefix, size, ext):
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, (a, b) in enumerate(_chunks(frames.shape[0], size)):
        p = out_dir / f"{prefix}{i:05d}{ext}"
        save_features(FeatureFile(frames[a:b].astype(np.float32)), p)
        paths.append(p)
    return paths


def oracle_dict(spec, corpus):
    return {
        "format": "splicekit-oracle",
        "version": 1,
        "spec": spec.to_dict(),
        "clean_gmm": gmm_to_dict(corpus.clean_gmm),
        "channel_matrices": corpus.channel_matrices.tolist(),
        "channel_biases": corpus.channel_biases.tolist(),
        "oracle_matrices": corpus.oracle_matrices.tolist(),
        "oracle_biases": corpus.oracle_biases.tolist(),
        "noisy_means": corpus.noisy_gmm().means.tolist(),
    }


def write_corpus(spec, out_dir, fmt="htk"):
    """Generate and write a corpus directory.

    Layout: ``clean/`` and ``noisy/`` utterance files, ``stereo.tsv``
    (noisy rows point at their clean partners), one-sided ``clean.tsv`` and
    ``noisy.tsv``, ``unpaired_clean.tsv``/``unpaired_noisy.tsv`` over the
    disjoint halves in ``unpaired/``, ``test.tsv`` for any test conditions
    under ``test/<tag>/``, and ``oracle.json``. Returns the corpus.
    """
    out = Path(out_dir)
    ext = ".csv" if fmt == "csv" else ".htk"
    corpus = generate(spec)
    size = spec.utterance_frames
    cpaths = _write_utterances(corpus.stereo.clean, out / "clean", "c", size, ext)
    npaths = _write_utterances(corpus.stereo.noisy, out / "noisy", "n", size, ext)
    crec = [Record(p.stem, p, "train") for p in cpaths]
    nrec = [Record(p.stem, p, "train", c.id) for p, c in zip(npaths, crec)]
    CorpusManifest(crec + nrec, check_stereo=False).save(out / "stereo.tsv")
    CorpusManifest(crec, check_stereo=False).save(out / "clean.tsv")
    CorpusManifest([Record(r.id, r.path, r.condition) for r in nrec], check_stereo=False).save(out / "noisy.tsv")

    split = split_unpaired(corpus.stereo, seed=spec.seed + 1)
    uc = _write_utterances(split.clean, out / "unpaired", "uc", size, ext)
    un = _write_utterances(split.noisy, out / "unpaired", "un", size, ext)
    CorpusManifest([Record(p.stem, p) for p in uc], check_stereo=False).save(out / "unpaired_clean.tsv")
    CorpusManifest([Record(p.stem, p) for p in un], check_stereo=False).save(out / "unpaired_noisy.tsv")

    if spec.test_conditions:
        records = []
        for k, cond in enumerate(spec.test_conditions):
            tag = str(cond["tag"])
            st, _ = draw_condition(corpus, int(cond.get("n_frames", 2000)), cond.get("shift", 0.0),
                                   spec.residual_sigma, seed=spec.seed + 100 + k)
            tc = _write_utterances(st.clean, out / "test" / tag, "c", size, ext)
            tn = _write_utterances(st.noisy, out / "test" / tag, "n", size, ext)
            for pc, pn in zip(tc, tn):
                records.append(Record(f"{tag}/{pc.stem}", pc, tag))
                records.append(Record(f"{tag}/{pn.stem}", pn, tag, f"{tag}/{pc.stem}"))
        CorpusManifest(records, check_stereo=False).save(out / "test.tsv")

    (out / "oracle.json").write_text(json.dumps(oracle_dict(spec, corpus), indent=1) + "\n")
    return corpus
