"""``splicekit`` command-line front end.

Exit codes: 0 success, 2 usage error (bad arguments, missing files, model
mismatch), 3 format error (corrupt feature or model file), 4 numerical
failure (including a failed ``verify`` check).

Numeric summaries go to stdout as ``key=value`` lines; warnings go to
stderr prefixed with ``warning:``. ``SPLICEKIT_MODEL_DIR``, when set, is the
directory relative model output paths are resolved against.
"""

import argparse
import contextlib
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import FormatError, NumericalError, SpliceError, UsageError
from .features import FeatureFile, cms, load_features, save_features
from .gmm import fit_em, posteriors
from .linalg import relative_frobenius
from .manifest import CorpusManifest
from .nonstereo import CorrespondenceMatrix, correspondence_matrix, estimate_nonstereo
from .runtime import AdaptedTransform, adapt_runtime, enhance_adapted
from .serialize import (gmm_to_dict, load_gmm, load_transform, save_gmm, save_transform,
                        transform_to_dict)
from .stereo import (StereoDataset, enhance, estimate_bias_only, estimate_diagonal,
                     estimate_msplice, estimate_splice, mse)
from .synthetic import SyntheticSpec, write_corpus

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERICAL = 0, 2, 3, 4
MODEL_DIR_ENV = "SPLICEKIT_MODEL_DIR"
DEFAULT_MIXTURES = 128

STEREO_KINDS = {
    "splice": estimate_splice,
    "msplice": estimate_msplice,
    "diag": estimate_diagonal,
    "bias": estimate_bias_only,
}


def kv(key, value):
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float):
        value = repr(value)
    elif isinstance(value, bool):
        value = str(value).lower()
    print(f"{key}={value}")


def model_path(p):
    p = Path(p)
    base = os.environ.get(MODEL_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _pmap(fn, items, jobs):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(jobs) as ex:
        return list(ex.map(fn, items))  # map keeps input order


def _load(path, use_cms):
    ff = load_features(path)
    frames = cms(ff.frames) if use_cms else ff.frames.astype(float)
    return FeatureFile(frames, ff.sample_period, ff.param_kind)


def load_frames(records, args):
    files = _pmap(lambda r: _load(r.path, not args.no_cms), records, args.jobs)
    return np.vstack([f.frames for f in files])


def load_stereo(manifest, args):
    pairs = manifest.stereo_pairs()
    if not pairs:
        raise UsageError("manifest has no stereo partners (partner column is empty)")
    clean = load_frames([c for c, _ in pairs], args)
    noisy = load_frames([n for _, n in pairs], args)
    return StereoDataset(clean, noisy)


def _out_file(out_dir, rec, src):
    p = Path(out_dir) / (rec.id + Path(src).suffix)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _sibling(path, suffix):
    path = Path(path)
    stem = path.name[:-len(".json")] if path.name.endswith(".json") else path.name
    return path.with_name(stem + suffix)


# ---------------------------------------------------------------- subcommands

def cmd_synth(args):
    spec = SyntheticSpec.load(args.spec)
    if args.seed_given:
        spec.seed = args.seed
    corpus = write_corpus(spec, args.out, args.format)
    kv("frames", corpus.stereo.n_frames)
    kv("mixtures", spec.m)
    kv("dim", spec.d)
    kv("mse_noisy", mse(corpus.stereo.noisy, corpus.stereo.clean))
    return EXIT_OK


def cmd_train_gmm(args):
    manifest = CorpusManifest.load(args.manifest)
    frames = load_frames(manifest.noisy_records(), args)
    history = []
    gmm = fit_em(frames, args.mixtures, init=args.init, iters=args.iters, seed=args.seed,
                 mode=args.covariance, history=history)
    out = model_path(args.out)
    save_gmm(gmm, out)
    lines = [f"iter={i} loglik={ll!r}" for i, ll in enumerate(history)]
    _sibling(out, ".log").write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    kv("frames", frames.shape[0])
    kv("mixtures", gmm.n_components)
    kv("monotone", bool(np.all(np.diff(history) >= -1e-8)))
    kv("model_id", gmm.model_id)
    return EXIT_OK


def _summarise_transform(t):
    eye = np.eye(t.dim)
    kv("kind", t.kind)
    kv("mixtures", t.n_components)
    kv("dim", t.dim)
    kv("max_matrix_dev", float(np.max(np.abs(t.matrices - eye))))
    kv("max_abs_bias", float(np.max(np.abs(t.biases))))
    for st in ("full", "bias_only", "identity"):
        kv(f"status_{st}", sum(s == st for s in t.status))


def cmd_estimate(args):
    out = model_path(args.out)
    if args.kind == "nonstereo":
        if not (args.clean_manifest and args.noisy_manifest):
            raise UsageError("nonstereo estimation needs --clean-manifest and --noisy-manifest")
        clean = load_frames(CorpusManifest.load(args.clean_manifest).records, args)
        noisy = load_frames(CorpusManifest.load(args.noisy_manifest).noisy_records(), args)
        noisy_gmm = load_gmm(args.gmm) if args.gmm else None
        res = estimate_nonstereo(noisy, clean, args.mixtures, em_iters=args.em_iters,
                                 noisy_iters=args.iters, seed=args.seed, mode=args.covariance,
                                 mllr_cycles=args.mllr_cycles, noisy_gmm=noisy_gmm)
        transform = res.transform
        save_gmm(res.noisy_gmm, _sibling(out, "_noisy_gmm.json"))
        save_gmm(res.clean_gmm, _sibling(out, "_clean_gmm.json"))
    else:
        if not args.manifest:
            raise UsageError(f"{args.kind} estimation needs a stereo --manifest")
        manifest = CorpusManifest.load(args.manifest)
        referenced = {r.partner for r in manifest.records if r.partner}
        bad = [r.id for r in manifest.records if not r.partner and r.id not in referenced]
        if bad:
            raise UsageError("stereo estimation needs partner ids; records without a stereo partner: "
                             + ", ".join(bad))
        stereo = load_stereo(manifest, args)
        if args.gmm:
            noisy_gmm = load_gmm(args.gmm)
        else:
            noisy_gmm = fit_em(stereo.noisy, args.mixtures, iters=args.iters, seed=args.seed,
                               mode=args.covariance)
            save_gmm(noisy_gmm, _sibling(out, "_noisy_gmm.json"))
        est = STEREO_KINDS[args.kind]
        transform = est(stereo, noisy_gmm) if args.kind == "bias" else \
            est(stereo, noisy_gmm, central=not args.raw_moments)
    save_transform(transform, out)
    _summarise_transform(transform)
    return EXIT_OK


def _enhance_records(records, fn, out_dir, args):
    def run(rec):
        src = load_features(rec.path)
        frames = cms(src.frames) if not args.no_cms else src.frames.astype(float)
        enhanced = fn(frames)
        save_features(FeatureFile(enhanced, src.sample_period, src.param_kind), _out_file(out_dir, rec, rec.path))
        return frames, enhanced
    return _pmap(run, records, args.jobs)


def _mse_summary(manifest, records, results, args, prefix=""):
    partnered = [(r, res) for r, res in zip(records, results) if r.partner]
    if not partnered:
        return None
    clean = load_frames([manifest.by_id[r.partner] for r, _ in partnered], args)
    noisy = np.vstack([res[0] for _, res in partnered])
    enh = np.vstack([res[1] for _, res in partnered])
    before, after = mse(noisy, clean), mse(enh, clean)
    kv(prefix + "mse_noisy", before)
    kv(prefix + "mse_enhanced", after)
    kv(prefix + "mse_ratio", after / before if before > 0 else float("nan"))
    return before, after


def cmd_enhance(args):
    gmm = load_gmm(args.gmm)
    t = load_transform(args.transform, gmm, force=args.force)
    manifest = CorpusManifest.load(args.manifest)
    records = manifest.noisy_records()
    if isinstance(t, AdaptedTransform):
        fn = lambda y: enhance_adapted(t, gmm, y, force=args.force)  # noqa: E731
    else:
        fn = lambda y: enhance(t, gmm, y, force=args.force)  # noqa: E731
    results = _enhance_records(records, fn, args.out_dir, args)
    kv("files", len(records))
    kv("frames", sum(r[0].shape[0] for r in results))
    _mse_summary(manifest, records, results, args)
    return EXIT_OK


def _safe(label):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


def cmd_adapt(args):
    gmm = load_gmm(args.gmm)
    base = load_transform(args.transform, gmm, force=args.force)
    if isinstance(base, AdaptedTransform):
        base = base.base
    manifest = CorpusManifest.load(args.manifest)
    groups = manifest.groups(args.group_by)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run(item):
        label, records = item
        frames = load_frames(records, args)
        adapted = adapt_runtime(base, gmm, frames, label, cycles=args.cycles, force=args.force)
        save_transform(adapted, out_dir / f"adapted_{_safe(label)}.json")
        fn = lambda y: enhance_adapted(adapted, gmm, y, tag=label, use_adapted_gmm=args.use_adapted_gmm,  # noqa: E731
                                       force=args.force)
        results = _enhance_records(records, fn, out_dir / _safe(label), args)
        return adapted, frames.shape[0], records, results

    # warnings from worker threads are emitted as they happen; summaries print in order
    outcomes = _pmap(run, groups.items(), args.jobs)
    for (label, _), (adapted, n, records, results) in zip(groups.items(), outcomes):
        p = f"{label}."
        kv(p + "frames", n)
        kv(p + "bias_delta", relative_frobenius(adapted.adapted_biases, base.biases))
        kv(p + "mllr_dev", float(np.linalg.norm(adapted.mllr.w - np.hstack([np.zeros((gmm.dim, 1)), np.eye(gmm.dim)]))))
        summary = _mse_summary(manifest, records, results, args, prefix=p)
        if summary is not None:
            clean = load_frames([manifest.by_id[r.partner] for r in records if r.partner], args)
            noisy = np.vstack([res[0] for r, res in zip(records, results) if r.partner])
            kv(p + "mse_base", mse(enhance(base, gmm, noisy, force=args.force), clean))
    kv("conditions", len(groups))
    return EXIT_OK


def cmd_vmatrix(args):
    clean_gmm, noisy_gmm = load_gmm(args.clean_gmm), load_gmm(args.noisy_gmm)
    stereo = load_stereo(CorpusManifest.load(args.manifest), args)
    v = correspondence_matrix(clean_gmm, noisy_gmm, stereo, args.mode)
    v.save(args.out)
    kv("frames", v.n_frames)
    kv("total", v.total)
    kv("diagonal_mass", v.diagonal_mass())
    kv("permutation_mass", v.permutation_mass())
    kv("row_argmax_permutation", v.row_argmax_is_permutation())
    return EXIT_OK


def _check(results, name, ok, value=None):
    results.append(ok)
    kv(f"check.{name}", "pass" if ok else "fail")
    if value is not None:
        kv(f"value.{name}", value)


def cmd_verify(args):
    results = []
    gmm = load_gmm(args.gmm) if args.gmm else None
    t = load_transform(args.transform, force=True) if args.transform else None
    if gmm is not None:
        _check(results, "gmm_weights_simplex",
               bool(np.all(gmm.weights >= 0) and abs(gmm.weights.sum() - 1) <= 1e-10))
        cov = gmm.full_covariances
        min_eig = float(np.min(np.linalg.eigvalsh(cov)))
        _check(results, "gmm_eigen_floor", min_eig >= gmm.floor * (1 - 1e-9), min_eig)
        again = json.loads(json.dumps(gmm_to_dict(gmm)))
        _check(results, "gmm_roundtrip", again == json.loads(Path(args.gmm).read_text()))
    if t is not None:
        base = t.base if isinstance(t, AdaptedTransform) else t
        eye = np.eye(base.dim)
        if base.kind == "bias_only":
            _check(results, "bias_only_identity", bool(np.all(base.matrices == eye)))
        if base.kind == "diagonal":
            _check(results, "diagonal_offdiag_zero", bool(np.all(base.matrices * (1 - eye) == 0)))
        if base.kind in ("msplice", "nonstereo"):
            if base.cov_x is None or base.cov_y is None:
                _check(results, "whitening", False)
            else:
                errs = [relative_frobenius(c @ sy @ c.T, sx) for c, sx, sy, st in
                        zip(base.matrices, base.cov_x, base.cov_y, base.status) if st == "full"]
                worst = float(max(errs, default=0.0))
                _check(results, "whitening", worst <= 1e-8, worst)
        again = json.loads(json.dumps(transform_to_dict(t)))
        _check(results, "transform_roundtrip", again == json.loads(Path(args.transform).read_text()))
        if gmm is not None:
            _check(results, "alignment_model_hash", base.alignment_model_id == gmm.model_id)
    if args.manifest and gmm is not None:
        frames = load_frames(CorpusManifest.load(args.manifest).noisy_records(), args)
        dev = float(np.max(np.abs(posteriors(gmm, frames).sum(axis=1) - 1)))
        _check(results, "posterior_rows_simplex", dev <= 1e-10, dev)
    if args.against_oracle:
        if t is None or gmm is None:
            raise UsageError("--against-oracle needs --transform and --gmm")
        _verify_oracle(results, t, gmm, args)
    if not results:
        raise UsageError("nothing to verify; pass --gmm, --transform and/or --manifest")
    kv("checks", len(results))
    kv("failed", results.count(False))
    return EXIT_OK if all(results) else EXIT_NUMERICAL


def _verify_oracle(results, t, gmm, args):
    try:
        oracle = json.loads(Path(args.against_oracle).read_text())
    except FileNotFoundError:
        raise UsageError(f"oracle file not found: {args.against_oracle}") from None
    noisy_means = np.array(oracle["noisy_means"])
    om, ob = np.array(oracle["oracle_matrices"]), np.array(oracle["oracle_biases"])
    if noisy_means.shape != gmm.means.shape:
        raise UsageError("oracle and GMM disagree on mixture count or dimension")
    cost = np.linalg.norm(gmm.means[:, None] - noisy_means[None], axis=2)
    rows, cols = linear_sum_assignment(cost)
    worst = 0.0
    for j, k in zip(rows, cols):
        me = relative_frobenius(t.matrices[j], om[k])
        be = relative_frobenius(t.biases[j], ob[k])
        print(f"mixture={j} oracle={k} matrix_error={me!r} bias_error={be!r}")
        worst = max(worst, me, be)
    _check(results, "oracle_recovery", worst <= args.tol, worst)


def cmd_inspect(args):
    try:
        obj = json.loads(Path(args.path).read_text())
    except FileNotFoundError:
        raise UsageError(f"file not found: {args.path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise FormatError(f"{args.path}: not a splicekit model file") from None
    fmt = obj.get("format") if isinstance(obj, dict) else None
    if fmt == "splicekit-gmm":
        g = load_gmm(args.path)
        kv("format", fmt)
        kv("mixtures", g.n_components)
        kv("dim", g.dim)
        kv("mode", g.mode)
        kv("floor", g.floor)
        kv("model_id", g.model_id)
    elif fmt == "splicekit-transform":
        t = load_transform(args.path)
        kv("format", fmt)
        if isinstance(t, AdaptedTransform):
            kv("condition_tag", t.condition_tag)
            kv("max_abs_adapted_bias", float(np.max(np.abs(t.adapted_biases))))
            t = t.base
        _summarise_transform(t)
        kv("alignment_model_id", t.alignment_model_id)
    else:
        raise FormatError(f"{args.path}: unknown model format {fmt!r}")
    return EXIT_OK


@dataclass
class PipelineConfig:
    """Config for ``run-pipeline`` (JSON). Relative paths resolve against the config file.

    Keys: ``out_dir``; ``kind`` (splice/msplice/diag/bias/nonstereo);
    ``train_manifest`` (stereo kinds) or ``clean_manifest`` + ``noisy_manifest``
    (nonstereo); optional ``test_manifest``; ``mixtures``, ``em_iters``,
    ``refine_iters``, ``covariance``, ``deterministic``, ``group_by``,
    ``seed``, ``cms``, ``adapt``, ``jobs``.
    """

    out_dir: str
    kind: str = "msplice"
    train_manifest: str = None
    clean_manifest: str = None
    noisy_manifest: str = None
    test_manifest: str = None
    mixtures: int = DEFAULT_MIXTURES
    em_iters: int = 10
    refine_iters: int = 3
    covariance: str = "full"
    deterministic: bool = True
    group_by: str = "condition"
    seed: int = 0
    cms: bool = True
    adapt: bool = False
    jobs: int = 1
    base_dir: Path = field(default=Path("."), repr=False)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except FileNotFoundError:
            raise UsageError(f"config not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        unknown = set(obj) - set(cls.__dataclass_fields__) | ({"base_dir"} & set(obj))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg = cls(**obj, base_dir=path.parent)
        cfg.validate()
        return cfg

    def path(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def validate(self):
        if self.mixtures < 1 or self.em_iters < 1 or self.refine_iters < 1:
            raise UsageError("mixtures and iteration counts must be >= 1")
        if self.kind not in (*STEREO_KINDS, "nonstereo"):
            raise UsageError(f"unknown kind {self.kind!r}")
        needed = ["clean_manifest", "noisy_manifest"] if self.kind == "nonstereo" else ["train_manifest"]
        if self.test_manifest:
            needed.append("test_manifest")
        for key in needed:
            val = getattr(self, key)
            if not val or not self.path(val).is_file():
                raise UsageError(f"config path {key}={val!r} does not resolve")


def cmd_run_pipeline(args):
    cfg = PipelineConfig.load(args.config)
    out = cfg.path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    common = ["--jobs", str(cfg.jobs), "--seed", str(cfg.seed)]
    if cfg.deterministic:
        common.append("--deterministic")
    if not cfg.cms:
        common.append("--no-cms")
    gmm = out / "noisy_gmm.json"
    transform = out / "transform.json"
    steps = []
    if cfg.kind == "nonstereo":
        steps.append(["estimate", "--kind", "nonstereo", "--clean-manifest", str(cfg.path(cfg.clean_manifest)),
                      "--noisy-manifest", str(cfg.path(cfg.noisy_manifest)), "--mixtures", str(cfg.mixtures),
                      "--iters", str(cfg.em_iters), "--em-iters", str(cfg.refine_iters),
                      "--covariance", cfg.covariance, "--out", str(transform)])
        gmm = _sibling(transform, "_noisy_gmm.json")
    else:
        steps.append(["train-gmm", "--manifest", str(cfg.path(cfg.train_manifest)), "--mixtures",
                      str(cfg.mixtures), "--iters", str(cfg.em_iters), "--covariance", cfg.covariance,
                      "--out", str(gmm)])
        steps.append(["estimate", "--kind", cfg.kind, "--manifest", str(cfg.path(cfg.train_manifest)),
                      "--gmm", str(gmm), "--out", str(transform)])
    if cfg.test_manifest:
        steps.append(["enhance", "--transform", str(transform), "--gmm", str(gmm), "--manifest",
                      str(cfg.path(cfg.test_manifest)), "--out-dir", str(out / "enhanced")])
        if cfg.adapt:
            steps.append(["adapt", "--transform", str(transform), "--gmm", str(gmm), "--manifest",
                          str(cfg.path(cfg.test_manifest)), "--group-by", cfg.group_by,
                          "--out-dir", str(out / "adapted")])
    for step in steps:
        print(f"step={step[0]}")
        code = main(step + common)
        if code != EXIT_OK:
            return code
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--jobs", type=int, default=1, help="worker threads for per-file/per-condition work")
    common.add_argument("--deterministic", action="store_true",
                        help="pin BLAS to one thread so every reduction has a fixed order")
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--no-cms", action="store_true", help="skip per-utterance cepstral mean subtraction")

    p = argparse.ArgumentParser(prog="splicekit", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus with oracle answers")
    s.add_argument("spec", help="JSON synthetic spec")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--format", choices=("htk", "csv"), default="htk")
    s.set_defaults(func=cmd_synth)

    def gmm_opts(sp):
        sp.add_argument("--mixtures", type=int, default=DEFAULT_MIXTURES)
        sp.add_argument("--iters", type=int, default=10, help="EM iterations for the noisy GMM")
        sp.add_argument("--covariance", choices=("full", "diagonal"), default="full")

    s = sub.add_parser("train-gmm", parents=[common], help="train the noisy GMM")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--init", choices=("kmeans++", "random"), default="kmeans++")
    gmm_opts(s)
    s.set_defaults(func=cmd_train_gmm)

    s = sub.add_parser("estimate", parents=[common], help="estimate a piecewise transform")
    s.add_argument("--kind", required=True, choices=(*STEREO_KINDS, "nonstereo"))
    s.add_argument("--manifest", help="stereo manifest (stereo kinds)")
    s.add_argument("--clean-manifest", help="clean-only manifest (nonstereo)")
    s.add_argument("--noisy-manifest", help="noisy-only manifest (nonstereo)")
    s.add_argument("--gmm", help="pre-trained noisy GMM; trained on the fly if omitted")
    s.add_argument("--em-iters", type=int, default=3, help="clean-GMM EM refinements (nonstereo, >= 3)")
    s.add_argument("--mllr-cycles", type=int, default=1)
    s.add_argument("--raw-moments", action="store_true", help="use uncentred second moments")
    s.add_argument("--out", required=True)
    gmm_opts(s)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("enhance", parents=[common], help="apply a transform to a corpus")
    s.add_argument("--transform", required=True)
    s.add_argument("--gmm", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--force", action="store_true", help="ignore alignment-model hash mismatch")
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("adapt", parents=[common], help="run-time bias adaptation per test condition")
    s.add_argument("--transform", required=True)
    s.add_argument("--gmm", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--group-by", choices=("condition", "dir"), default="condition")
    s.add_argument("--cycles", type=int, default=1, help="MLLR alignment/solve cycles")
    s.add_argument("--use-adapted-gmm", action="store_true", help="align with the adapted GMM when enhancing")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_adapt)

    s = sub.add_parser("vmatrix", parents=[common], help="clean/noisy mixture correspondence matrix")
    s.add_argument("--clean-gmm", required=True)
    s.add_argument("--noisy-gmm", required=True)
    s.add_argument("--manifest", required=True, help="stereo manifest")
    s.add_argument("--mode", choices=("soft", "hard"), default="hard")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_vmatrix)

    s = sub.add_parser("verify", parents=[common], help="re-check invariants of stored artifacts")
    s.add_argument("--gmm")
    s.add_argument("--transform")
    s.add_argument("--manifest", help="frames for the posterior simplex check")
    s.add_argument("--against-oracle", metavar="ORACLE", help="oracle.json written by synth")
    s.add_argument("--tol", type=float, default=1e-3, help="oracle recovery tolerance")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("inspect", parents=[common], help="summarise a model or transform file")
    s.add_argument("path")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("run-pipeline", parents=[common], help="run train/estimate/enhance/adapt from a config")
    s.add_argument("config")
    s.set_defaults(func=cmd_run_pipeline)
    return p


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    ctx = contextlib.nullcontext()
    if args.deterministic:
        from threadpoolctl import threadpool_limits
        ctx = threadpool_limits(limits=1)
    try:
        with ctx, warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = _show_warning
            return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SpliceError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
