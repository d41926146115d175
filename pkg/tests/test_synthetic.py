import json

import numpy as np
import pytest

from splicekit.errors import UsageError
from splicekit.gmm import posteriors
from splicekit.linalg import relative_frobenius
from splicekit.manifest import CorpusManifest
from splicekit.stereo import apply_maps, enhance, estimate_splice, mse
from splicekit.synthetic import SyntheticSpec, draw_condition, generate, split_unpaired, write_corpus


def test_identity_channel_gives_equal_streams():
    c = generate(SyntheticSpec(d=3, m=2, n_frames=500, channel="identity", seed=4))
    assert np.array_equal(c.stereo.clean, c.stereo.noisy)


def test_same_seed_bit_identical():
    spec = SyntheticSpec(d=3, m=3, n_frames=800, residual_sigma=0.1, seed=9)
    a, b = generate(spec), generate(spec)
    assert np.array_equal(a.stereo.noisy, b.stereo.noisy)
    assert np.array_equal(a.stereo.clean, b.stereo.clean)
    assert a.clean_gmm.model_id == b.clean_gmm.model_id
    other = generate(SyntheticSpec(d=3, m=3, n_frames=800, residual_sigma=0.1, seed=10))
    assert not np.array_equal(a.stereo.noisy, other.stereo.noisy)


def test_per_mixture_regression_recovers_oracle(clean_corpus):
    c = clean_corpus
    for m in range(2):
        sel = c.labels == m
        y = np.hstack([np.ones((sel.sum(), 1)), c.stereo.noisy[sel]])
        sol = np.linalg.lstsq(y, c.stereo.clean[sel], rcond=None)[0]
        assert np.allclose(sol[1:].T, c.oracle_matrices[m], atol=1e-6)
        assert np.allclose(sol[0], c.oracle_biases[m], atol=1e-6)


def test_separation_and_unit_scale():
    c = generate(SyntheticSpec(d=5, m=6, n_frames=10, separation=10.0, seed=2))
    g = c.clean_gmm
    assert np.allclose(np.linalg.eigvalsh(g.covariances)[:, -1], 1.0)
    dist = np.linalg.norm(g.means[:, None] - g.means[None], axis=2)
    assert dist[np.triu_indices(6, 1)].min() >= 10.0


def test_channel_condition_bound():
    bad = [{"matrix": [[1.0, 0.0], [0.0, 1e-4]], "bias": [0.0, 0.0]}]
    with pytest.raises(UsageError, match="condition"):
        generate(SyntheticSpec(d=2, m=1, n_frames=10, channel=bad))


@pytest.mark.parametrize("kwargs", [{"separation": 0.0}, {"residual_sigma": -1.0}, {"d": 0},
                                    {"channel": "rotating"}])
def test_spec_validation(kwargs):
    with pytest.raises(UsageError):
        SyntheticSpec(**kwargs)


def test_spec_from_dict_rejects_unknown_keys():
    with pytest.raises(UsageError, match="bogus"):
        SyntheticSpec.from_dict({"bogus": 1})


def test_split_unpaired_small():
    c = generate(SyntheticSpec(d=2, m=1, n_frames=2, seed=1))
    s = split_unpaired(c.stereo, seed=0)
    assert s.clean.shape == (1, 2) and s.noisy.shape == (1, 2)
    assert s.clean_index[0] != s.noisy_index[0]
    with pytest.raises(UsageError):
        split_unpaired(generate(SyntheticSpec(d=2, m=1, n_frames=1)).stereo)


@pytest.mark.parametrize("n", [3, 10, 101])
def test_split_unpaired_partition(n):
    c = generate(SyntheticSpec(d=2, m=2, n_frames=n, seed=n))
    s = split_unpaired(c.stereo, seed=3)
    assert len(s.clean) == (n + 1) // 2 and len(s.noisy) == n // 2
    assert set(s.clean_index) | set(s.noisy_index) == set(range(n))
    assert not set(s.clean_index) & set(s.noisy_index)
    assert np.array_equal(s.clean, c.stereo.clean[s.clean_index])
    assert np.array_equal(s.noisy, c.stereo.noisy[s.noisy_index])


def test_oracle_and_estimated_mse(small_corpus):
    c = small_corpus
    g = c.noisy_gmm(0.2)
    post = posteriors(g, c.stereo.noisy)
    oracle = apply_maps(c.oracle_matrices, c.oracle_biases, c.stereo.noisy, post)
    # the oracle inverts the channel; what remains is the inverted residual noise
    floor = 0.2 ** 2 * np.mean([np.trace(a @ a.T) / c.stereo.dim for a in c.oracle_matrices])
    e_oracle = mse(oracle, c.stereo.clean)
    assert e_oracle <= 1.5 * floor
    e_est = mse(enhance(estimate_splice(c.stereo, g), g, c.stereo.noisy), c.stereo.clean)
    assert e_est <= 2 * e_oracle


def test_noiseless_recovery_separation_10():
    c = generate(SyntheticSpec(d=4, m=4, n_frames=8000, separation=10.0, seed=5))
    t = estimate_splice(c.stereo, c.noisy_gmm())
    for m in range(4):
        assert relative_frobenius(t.matrices[m], c.oracle_matrices[m]) <= 1e-3


def test_draw_condition_shift(small_corpus):
    st_, _ = draw_condition(small_corpus, 500, 0.0, 0.0, seed=1)
    st2, _ = draw_condition(small_corpus, 500, 2.5, 0.0, seed=1)
    assert np.allclose(st2.noisy - st_.noisy, 2.5)
    assert np.array_equal(st2.clean, st_.clean)


@pytest.mark.parametrize("fmt", ["htk", "csv"])
def test_write_corpus_layout(tmp_path, fmt):
    spec = SyntheticSpec(d=3, m=2, n_frames=450, seed=1, utterance_frames=100,
                         test_conditions=[{"tag": "car", "shift": 1.0, "n_frames": 150}])
    write_corpus(spec, tmp_path, fmt)
    stereo = CorpusManifest.load(tmp_path / "stereo.tsv")
    assert len(stereo.stereo_pairs()) == 5
    assert len(CorpusManifest.load(tmp_path / "unpaired_clean.tsv")) == 3
    test = CorpusManifest.load(tmp_path / "test.tsv")
    assert list(test.groups()) == ["car"]
    oracle = json.loads((tmp_path / "oracle.json").read_text())
    assert np.array(oracle["oracle_matrices"]).shape == (2, 3, 3)
    assert oracle["spec"]["seed"] == 1
