import json
import struct

import numpy as np
import pytest

from splicekit.cli import EXIT_FORMAT, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from splicekit.features import FeatureFile, read_htk, write_htk
from splicekit.manifest import CorpusManifest
from splicekit.serialize import load_gmm, load_transform, save_transform
from splicekit.stereo import PiecewiseTransform
from splicekit.synthetic import SyntheticSpec, write_corpus

SPEC = dict(d=3, m=3, n_frames=3000, residual_sigma=0.1, seed=5, utterance_frames=500, matrix_jitter=0.3,
            test_conditions=[{"tag": "car", "shift": 1.0, "n_frames": 1000},
                             {"tag": "babble", "shift": [0.0, -1.5, 0.5], "n_frames": 1000}])


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    values = dict(line.split("=", 1) for line in out.splitlines() if "=" in line and " " not in line)
    return code, values, out, err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(SyntheticSpec(**SPEC), root)
    return root


@pytest.fixture(scope="module")
def identity_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("ident")
    write_corpus(SyntheticSpec(d=3, m=2, n_frames=1000, channel="identity", seed=1, utterance_frames=250), root)
    return root


def test_synth_identity_partners_equal(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"d": 2, "m": 2, "n_frames": 600, "channel": "identity", "utterance_frames": 200}))
    code, vals, _, _ = run(capsys, "synth", spec, "--out", tmp_path / "c")
    assert code == EXIT_OK and vals["frames"] == "600"
    pairs = CorpusManifest.load(tmp_path / "c" / "stereo.tsv").stereo_pairs()
    assert len(pairs) == 3
    for clean, noisy in pairs:
        assert clean.path.read_bytes() == noisy.path.read_bytes()


def test_synth_seed_reproducible(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"d": 2, "m": 2, "n_frames": 300, "seed": 3}))
    for name in ("a", "b"):
        assert run(capsys, "synth", spec, "--out", tmp_path / name, "--format", "csv")[0] == EXIT_OK
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    run(capsys, "synth", spec, "--out", tmp_path / "c", "--format", "csv", "--seed", "4")
    assert (tmp_path / "a" / "oracle.json").read_text() != (tmp_path / "c" / "oracle.json").read_text()


def test_synth_bad_spec(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"d": 2, "separation": -1}))
    assert run(capsys, "synth", spec, "--out", tmp_path / "x")[0] == EXIT_USAGE


def test_train_gmm_log_monotone(corpus, tmp_path, capsys):
    code, vals, _, _ = run(capsys, "train-gmm", "--manifest", corpus / "noisy.tsv", "--mixtures", 3,
                           "--iters", 8, "--out", tmp_path / "g.json", "--deterministic")
    assert code == EXIT_OK and vals["monotone"] == "true"
    lls = [float(line.split("loglik=")[1]) for line in (tmp_path / "g.log").read_text().splitlines()]
    assert len(lls) == 9 and np.all(np.diff(lls) >= -1e-8)
    assert load_gmm(tmp_path / "g.json").model_id == vals["model_id"]


def test_train_gmm_missing_manifest(tmp_path, capsys):
    code, _, _, err = run(capsys, "train-gmm", "--manifest", tmp_path / "nope.tsv", "--out", tmp_path / "g.json")
    assert code == EXIT_USAGE and "nope.tsv" in err


def test_model_dir_env(corpus, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SPLICEKIT_MODEL_DIR", str(tmp_path / "models"))
    run(capsys, "train-gmm", "--manifest", corpus / "noisy.tsv", "--mixtures", 2, "--iters", 2, "--out", "g.json")
    assert (tmp_path / "models" / "g.json").is_file()


def test_estimate_identity_splice(identity_corpus, tmp_path, capsys):
    code, _, _, _ = run(capsys, "estimate", "--kind", "splice", "--manifest", identity_corpus / "stereo.tsv",
                        "--mixtures", 2, "--out", tmp_path / "t.json")
    assert code == EXIT_OK
    code, vals, _, _ = run(capsys, "inspect", tmp_path / "t.json")
    assert code == EXIT_OK and vals["kind"] == "splice"
    assert float(vals["max_matrix_dev"]) <= 1e-8 and float(vals["max_abs_bias"]) <= 1e-8


def test_estimate_stereo_needs_partners(corpus, tmp_path, capsys):
    code, _, _, err = run(capsys, "estimate", "--kind", "splice", "--manifest", corpus / "clean.tsv",
                          "--out", tmp_path / "t.json")
    assert code == EXIT_USAGE and "c00000" in err


def test_estimate_nonstereo_without_stereo_columns(corpus, tmp_path, capsys):
    code, vals, _, _ = run(capsys, "estimate", "--kind", "nonstereo", "--clean-manifest",
                           corpus / "unpaired_clean.tsv", "--noisy-manifest", corpus / "unpaired_noisy.tsv",
                           "--mixtures", 3, "--out", tmp_path / "ns.json")
    assert code == EXIT_OK and vals["kind"] == "nonstereo"
    assert (tmp_path / "ns_clean_gmm.json").is_file() and (tmp_path / "ns_noisy_gmm.json").is_file()
    code, vals, _, _ = run(capsys, "verify", "--transform", tmp_path / "ns.json",
                           "--gmm", tmp_path / "ns_noisy_gmm.json")
    assert code == EXIT_OK and vals["check.whitening"] == "pass"


def test_estimate_nonstereo_needs_both_manifests(corpus, tmp_path, capsys):
    code, _, _, _ = run(capsys, "estimate", "--kind", "nonstereo", "--clean-manifest",
                        corpus / "unpaired_clean.tsv", "--out", tmp_path / "ns.json")
    assert code == EXIT_USAGE


@pytest.fixture
def msplice_model(corpus, tmp_path, capsys):
    gmm, t = tmp_path / "g.json", tmp_path / "t.json"
    assert run(capsys, "train-gmm", "--manifest", corpus / "noisy.tsv", "--mixtures", 3, "--no-cms",
               "--out", gmm)[0] == EXIT_OK
    assert run(capsys, "estimate", "--kind", "msplice", "--manifest", corpus / "stereo.tsv", "--gmm", gmm,
               "--no-cms", "--out", t)[0] == EXIT_OK
    return gmm, t


def test_msplice_verify(corpus, msplice_model, capsys):
    gmm, t = msplice_model
    code, vals, _, _ = run(capsys, "verify", "--gmm", gmm, "--transform", t, "--manifest",
                           corpus / "noisy.tsv", "--no-cms")
    assert code == EXIT_OK
    for key in ("whitening", "gmm_weights_simplex", "gmm_roundtrip", "transform_roundtrip",
                "alignment_model_hash", "posterior_rows_simplex", "gmm_eigen_floor"):
        assert vals[f"check.{key}"] == "pass"


def test_verify_against_oracle(corpus, tmp_path, capsys):
    gmm, t = tmp_path / "g.json", tmp_path / "t.json"
    run(capsys, "train-gmm", "--manifest", corpus / "noisy.tsv", "--mixtures", 3, "--no-cms", "--out", gmm)
    run(capsys, "estimate", "--kind", "splice", "--manifest", corpus / "stereo.tsv", "--gmm", gmm,
        "--no-cms", "--out", t)
    code, vals, out, _ = run(capsys, "verify", "--gmm", gmm, "--transform", t,
                             "--against-oracle", corpus / "oracle.json", "--tol", "0.2")
    assert code == EXIT_OK and vals["check.oracle_recovery"] == "pass"
    assert out.count("matrix_error=") == 3
    code, vals, _, _ = run(capsys, "verify", "--gmm", gmm, "--transform", t,
                           "--against-oracle", corpus / "oracle.json", "--tol", "1e-9")
    assert code == EXIT_NUMERICAL and vals["check.oracle_recovery"] == "fail"


def test_verify_detects_broken_whitening(msplice_model, tmp_path, capsys):
    gmm, t = msplice_model
    obj = json.loads(t.read_text())
    obj["matrices"][0][0][0] += 0.5
    (tmp_path / "broken.json").write_text(json.dumps(obj))
    code, vals, _, _ = run(capsys, "verify", "--transform", tmp_path / "broken.json")
    assert code == EXIT_NUMERICAL and vals["check.whitening"] == "fail"


def test_enhance_reports_mse_drop(corpus, msplice_model, tmp_path, capsys):
    gmm, t = msplice_model
    code, vals, _, _ = run(capsys, "enhance", "--transform", t, "--gmm", gmm, "--manifest", corpus / "stereo.tsv",
                           "--out-dir", tmp_path / "enh", "--no-cms")
    assert code == EXIT_OK and vals["files"] == "6"
    assert float(vals["mse_enhanced"]) < 0.5 * float(vals["mse_noisy"])
    for rec in CorpusManifest.load(corpus / "stereo.tsv").noisy_records():
        assert read_htk(tmp_path / "enh" / f"{rec.id}.htk").n_frames == read_htk(rec.path).n_frames


def test_enhance_identity_is_byte_exact(corpus, tmp_path, capsys):
    gmm_path = tmp_path / "g.json"
    run(capsys, "train-gmm", "--manifest", corpus / "noisy.tsv", "--mixtures", 2, "--iters", 2, "--out", gmm_path)
    g = load_gmm(gmm_path)
    ident = PiecewiseTransform("splice", np.repeat(np.eye(3)[None], 2, 0), np.zeros((2, 3)), g.model_id)
    save_transform(ident, tmp_path / "id.json")
    code, _, _, _ = run(capsys, "enhance", "--transform", tmp_path / "id.json", "--gmm", gmm_path,
                        "--manifest", corpus / "noisy.tsv", "--out-dir", tmp_path / "out", "--no-cms")
    assert code == EXIT_OK
    for rec in CorpusManifest.load(corpus / "noisy.tsv"):
        assert (tmp_path / "out" / f"{rec.id}.htk").read_bytes() == rec.path.read_bytes()


def test_enhance_hash_mismatch(corpus, msplice_model, tmp_path, capsys):
    gmm, t = msplice_model
    other = tmp_path / "other.json"
    run(capsys, "train-gmm", "--manifest", corpus / "noisy.tsv", "--mixtures", 3, "--seed", 9, "--out", other)
    args = ["enhance", "--transform", t, "--gmm", other, "--manifest", corpus / "noisy.tsv",
            "--out-dir", tmp_path / "o"]
    code, _, _, err = run(capsys, *args)
    assert code == EXIT_USAGE and "--force" in err
    assert run(capsys, *args, "--force")[0] == EXIT_OK


def test_adapt_two_conditions(corpus, msplice_model, tmp_path, capsys):
    gmm, t = msplice_model
    code, vals, _, _ = run(capsys, "adapt", "--transform", t, "--gmm", gmm, "--manifest", corpus / "test.tsv",
                           "--out-dir", tmp_path / "ad", "--no-cms")
    assert code == EXIT_OK and vals["conditions"] == "2"
    for tag in ("car", "babble"):
        ad = load_transform(tmp_path / "ad" / f"adapted_{tag}.json")
        assert ad.condition_tag == tag
        assert float(vals[f"{tag}.mse_enhanced"]) <= float(vals[f"{tag}.mse_base"])
        assert len(list((tmp_path / "ad" / tag).rglob("*.htk"))) == 2


def test_adapt_matching_condition_is_near_noop(corpus, msplice_model, tmp_path, capsys):
    gmm, t = msplice_model
    code, vals, _, _ = run(capsys, "adapt", "--transform", t, "--gmm", gmm, "--manifest", corpus / "stereo.tsv",
                           "--out-dir", tmp_path / "ad", "--no-cms")
    assert code == EXIT_OK and float(vals["train.bias_delta"]) <= 0.1


def test_adapt_tiny_condition_warns(corpus, msplice_model, tmp_path, capsys):
    gmm, t = msplice_model
    write_htk(FeatureFile(np.random.default_rng(0).standard_normal((2, 3)).astype(np.float32)), tmp_path / "u.htk")
    (tmp_path / "tiny.tsv").write_text("id\tpath\tcondition\tpartner\nu\tu.htk\ttiny\t\n")
    code, vals, _, err = run(capsys, "adapt", "--transform", t, "--gmm", gmm, "--manifest", tmp_path / "tiny.tsv",
                             "--out-dir", tmp_path / "ad", "--no-cms")
    assert code == EXIT_OK and "warning:" in err and "ridge" in err
    assert (tmp_path / "ad" / "adapted_tiny.json").is_file()


def test_vmatrix_same_model(identity_corpus, tmp_path, capsys):
    g = tmp_path / "g.json"
    run(capsys, "train-gmm", "--manifest", identity_corpus / "noisy.tsv", "--mixtures", 2, "--out", g)
    code, vals, _, _ = run(capsys, "vmatrix", "--clean-gmm", g, "--noisy-gmm", g, "--manifest",
                           identity_corpus / "stereo.tsv", "--mode", "hard", "--out", tmp_path / "v.txt")
    assert code == EXIT_OK and float(vals["diagonal_mass"]) == 1.0
    v = np.loadtxt(tmp_path / "v.txt")
    assert v.sum() - np.trace(v) == 0
    code, vals, _, _ = run(capsys, "vmatrix", "--clean-gmm", g, "--noisy-gmm", g, "--manifest",
                           identity_corpus / "stereo.tsv", "--mode", "soft", "--out", tmp_path / "s.txt")
    header = (tmp_path / "s.txt").read_text().splitlines()[0]
    assert header == "# M=2 mode=soft N=1000"
    assert abs(np.loadtxt(tmp_path / "s.txt").sum() - 1000) <= 1e-6


def test_vmatrix_nonstereo_pair(corpus, tmp_path, capsys):
    run(capsys, "estimate", "--kind", "nonstereo", "--clean-manifest", corpus / "unpaired_clean.tsv",
        "--noisy-manifest", corpus / "unpaired_noisy.tsv", "--mixtures", 3, "--no-cms", "--out", tmp_path / "ns.json")
    code, vals, _, _ = run(capsys, "vmatrix", "--clean-gmm", tmp_path / "ns_clean_gmm.json",
                           "--noisy-gmm", tmp_path / "ns_noisy_gmm.json", "--manifest", corpus / "stereo.tsv",
                           "--no-cms", "--out", tmp_path / "v.txt")
    assert code == EXIT_OK and vals["row_argmax_permutation"] == "true"


def test_format_error_exit_code(tmp_path, capsys):
    (tmp_path / "bad.htk").write_bytes(struct.pack(">iihh", 10, 100000, 8, 6) + b"\0" * 8)
    (tmp_path / "m.tsv").write_text("id\tpath\nb\tbad.htk\n")
    code, _, _, err = run(capsys, "train-gmm", "--manifest", tmp_path / "m.tsv", "--mixtures", 1,
                          "--out", tmp_path / "g.json")
    assert code == EXIT_FORMAT and "bad.htk" in err
    (tmp_path / "x.json").write_text("[]")
    assert run(capsys, "inspect", tmp_path / "x.json")[0] == EXIT_FORMAT


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--kind", "magic", "--out", "x"])
    assert exc.value.code == EXIT_USAGE
    assert run(capsys, "verify")[0] == EXIT_USAGE
    assert run(capsys, "inspect", tmp_path / "missing.json")[0] == EXIT_USAGE


def test_help_for_every_subcommand(capsys):
    for sub in ("synth", "train-gmm", "estimate", "enhance", "adapt", "vmatrix", "verify", "inspect",
                "run-pipeline"):
        with pytest.raises(SystemExit) as exc:
            main([sub, "--help"])
        assert exc.value.code == 0
        assert "usage:" in capsys.readouterr().out


def test_run_pipeline(corpus, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"out_dir": "run", "kind": "splice", "train_manifest": str(corpus / "stereo.tsv"),
                               "test_manifest": str(corpus / "test.tsv"), "mixtures": 3, "em_iters": 5,
                               "adapt": True, "cms": False}))
    code, _, out, _ = run(capsys, "run-pipeline", cfg)
    assert code == EXIT_OK
    assert [line for line in out.splitlines() if line.startswith("step=")] == \
        ["step=train-gmm", "step=estimate", "step=enhance", "step=adapt"]
    assert (tmp_path / "run" / "adapted" / "adapted_car.json").is_file()


def test_run_pipeline_bad_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"out_dir": "run", "train_manifest": "missing.tsv"}))
    code, _, _, err = run(capsys, "run-pipeline", cfg)
    assert code == EXIT_USAGE and "train_manifest" in err
    cfg.write_text(json.dumps({"out_dir": "run", "mixturez": 3}))
    assert run(capsys, "run-pipeline", cfg)[0] == EXIT_USAGE


def test_jobs_do_not_change_results(corpus, msplice_model, tmp_path, capsys):
    gmm, t = msplice_model
    for jobs in (1, 3):
        run(capsys, "enhance", "--transform", t, "--gmm", gmm, "--manifest", corpus / "test.tsv",
            "--out-dir", tmp_path / f"j{jobs}", "--jobs", jobs, "--deterministic")
    for p in (tmp_path / "j1").rglob("*.htk"):
        assert p.read_bytes() == (tmp_path / "j3" / p.relative_to(tmp_path / "j1")).read_bytes()
