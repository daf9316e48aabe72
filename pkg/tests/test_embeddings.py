from __future__ import annotations

import numpy as np
import pytest

from cropmap.embeddings import (
    EmbeddingRaster,
    NormalizationRecord,
    fit_normalization,
    ingest_embeddings,
    normalize_features,
    write_embeddings,
)
from cropmap.errors import ConfigError, FormatError
from cropmap.rastercube import FeatureRaster


def raster(dim, seed=0, w=4, h=3):
    v = np.random.default_rng(seed).normal(size=(dim, h, w)).astype(np.float32)
    return EmbeddingRaster.from_matrix(v, "tessera", 2018)


def test_ingest_expected_dimension(tmp_path):
    write_embeddings(raster(128), tmp_path / "e")
    er = ingest_embeddings(tmp_path / "e", 128)
    assert er.dimension == 128 and er.provider == "tessera"


def test_ingest_dimension_mismatch(tmp_path):
    write_embeddings(raster(64), tmp_path / "e")
    with pytest.raises(FormatError):
        ingest_embeddings(tmp_path / "e", 128)


def test_embedding_round_trip_bytes(tmp_path):
    er = raster(16, seed=3)
    write_embeddings(er, tmp_path / "a")
    write_embeddings(ingest_embeddings(tmp_path / "a", 16), tmp_path / "b")
    assert (tmp_path / "a" / "values.bin").read_bytes() == (tmp_path / "b" / "values.bin").read_bytes()


def test_two_point_zscore():
    rec = fit_normalization(np.array([[2.0], [4.0]]), "zscore")
    assert rec.apply(np.array([[2.0], [4.0]])).ravel().tolist() == [-1.0, 1.0]


def test_none_is_identity():
    fr = raster(5)
    out, rec = normalize_features(fr, "none")
    assert np.array_equal(out.values, fr.values)


def test_zero_variance_feature_gets_unit_scale():
    x = np.array([[1.0, 5.0], [3.0, 5.0]])
    rec = fit_normalization(x, "zscore", ["a", "b"])
    assert rec.zero_variance == ("b",)
    assert rec.apply(x)[:, 1].tolist() == [0.0, 0.0]


def test_stored_record_reproduces_normalization():
    rng = np.random.default_rng(1)
    x = rng.normal(3, 2, size=(200, 7))
    for method in ("zscore", "minmax"):
        rec = fit_normalization(x, method)
        back = NormalizationRecord.from_json(rec.to_json())
        assert np.abs(back.apply(x) - rec.apply(x)).max() <= 1e-9
        assert np.abs(rec.inverse(rec.apply(x)) - x).max() <= 1e-9


def test_normalize_with_mask_records_provenance():
    fr = raster(4, w=5, h=5)
    mask = np.zeros((5, 5), bool)
    mask[:2] = True
    out, rec = normalize_features(fr, "zscore", stats_from=mask)
    assert rec.fitted_on == "labeled_pixels" and rec.n_pixels == 10
    assert out.metadata["normalization"]["fitted_year"] == 2018
    z = out.matrix(*np.nonzero(mask))
    assert np.allclose(z.mean(axis=0), 0, atol=1e-6)


def test_unknown_method():
    with pytest.raises(ConfigError):
        fit_normalization(np.ones((2, 2)), "robust")
