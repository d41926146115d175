import json

import numpy as np
import pytest

from splicekit.errors import FormatError, ModelMismatchError
from splicekit.nonstereo import MllrTransform
from splicekit.runtime import AdaptedTransform
from splicekit.serialize import load_gmm, load_transform, save_gmm, save_transform
from splicekit.stereo import estimate_msplice

from conftest import random_gmm


@pytest.mark.parametrize("mode", ["full", "diagonal"])
def test_gmm_roundtrip_exact(tmp_path, rng, mode):
    g = random_gmm(rng, 4, 3, mode=mode)
    save_gmm(g, tmp_path / "g.json")
    back = load_gmm(tmp_path / "g.json")
    assert back.model_id == g.model_id
    assert np.array_equal(back.covariances, g.covariances) and back.mode == mode


def test_transform_roundtrip_exact(tmp_path, small_corpus):
    g = small_corpus.noisy_gmm(0.2)
    t = estimate_msplice(small_corpus.stereo, g)
    save_transform(t, tmp_path / "t.json")
    back = load_transform(tmp_path / "t.json", g)
    for key in ("matrices", "biases", "clean_means", "cov_x", "cov_y"):
        assert np.array_equal(getattr(back, key), getattr(t, key))
    assert back.status == t.status and back.alignment_model_id == t.alignment_model_id

    ad = AdaptedTransform(t, t.biases + 1.0, MllrTransform.identity(t.dim), "car")
    save_transform(ad, tmp_path / "a.json")
    back = load_transform(tmp_path / "a.json", g)
    assert isinstance(back, AdaptedTransform) and back.condition_tag == "car"
    assert np.array_equal(back.adapted_biases, ad.adapted_biases)
    assert np.array_equal(back.base.biases, t.biases)


def test_hash_mismatch(tmp_path, small_corpus, rng):
    g = small_corpus.noisy_gmm(0.2)
    save_transform(estimate_msplice(small_corpus.stereo, g), tmp_path / "t.json")
    other = g.replace(means=g.means + 1e-9)
    with pytest.raises(ModelMismatchError):
        load_transform(tmp_path / "t.json", other)
    assert load_transform(tmp_path / "t.json", other, force=True).kind == "msplice"


def test_bad_files(tmp_path, rng):
    (tmp_path / "junk.json").write_text("{not json")
    with pytest.raises(FormatError):
        load_gmm(tmp_path / "junk.json")
    save_gmm(random_gmm(rng, 2, 2), tmp_path / "g.json")
    with pytest.raises(FormatError, match="expected"):
        load_transform(tmp_path / "g.json")
    obj = json.loads((tmp_path / "g.json").read_text())
    obj["means"] = [[0.0]]
    (tmp_path / "g2.json").write_text(json.dumps(obj))
    with pytest.raises(FormatError, match="means"):
        load_gmm(tmp_path / "g2.json")
    obj["version"] = 99
    (tmp_path / "g3.json").write_text(json.dumps(obj))
    with pytest.raises(FormatError, match="version"):
        load_gmm(tmp_path / "g3.json")
