from __future__ import annotations

import numpy as np
import pytest

from cropmap.errors import ConfigError
from cropmap.indices import (
    S2_BANDS,
    TC_COMPONENTS,
    IndexSpec,
    TasseledCapSpec,
    compute_index,
    compute_tasseled_cap,
    index_formula,
)

from conftest import make_cube, make_sar


def roles(**kw):
    return {k: np.array([v], dtype=np.float64) for k, v in kw.items()}


def test_ndvi_hand_value():
    v, ok = index_formula("NDVI", roles(nir=0.5, red=0.1))
    assert ok[0] and v[0] == pytest.approx(0.6666667, abs=1e-7)


def test_symmetric_cases_are_zero():
    assert index_formula("NDVI", roles(nir=0.3, red=0.3))[0][0] == 0.0
    assert index_formula("GCVI", roles(nir=0.3, green=0.3))[0][0] == 0.0


def test_other_formulas():
    b = dict(nir=0.4, red=0.1, blue=0.05, green=0.2, swir1=0.3, vv=0.08, vh=0.02)
    r = roles(**b)
    assert index_formula("EVI", r)[0][0] == pytest.approx(2.5 * 0.3 / (0.4 + 0.6 - 0.375 + 1))
    assert index_formula("LSWI", r)[0][0] == pytest.approx(0.1 / 0.7)
    assert index_formula("NDWI", r)[0][0] == pytest.approx(-0.2 / 0.6)
    assert index_formula("GCVI", r)[0][0] == pytest.approx(1.0)
    assert index_formula("RVI", r)[0][0] == pytest.approx(4 * 0.02 / 0.1)


def test_zero_denominator_is_invalid_zero():
    v, ok = index_formula("NDVI", roles(nir=0.0, red=0.0))
    assert v[0] == 0.0 and not ok[0]


def test_compute_index_names_and_mask():
    cube = make_cube(n_dates=4)
    fr = compute_index(cube, IndexSpec("NDVI"))
    assert fr.feature_names[0] == f"NDVI_{cube.dates[0].isoformat()}"
    assert np.array_equal(fr.valid, cube.valid)
    nir, red = cube.band("S2_B08").astype(np.float64), cube.band("S2_B04").astype(np.float64)
    expect = np.where(cube.valid, (nir - red) / (nir + red), 0.0)
    assert np.allclose(fr.values, expect, atol=1e-6)


def test_rvi_on_sar_cube_records_linear_scale():
    fr = compute_index(make_sar(), IndexSpec("RVI"))
    assert fr.metadata["backscatter_scale"] == "linear_power"


def test_missing_band_is_config_error():
    with pytest.raises(ConfigError):
        compute_index(make_cube(bands=("S2_B02",)), IndexSpec("NDVI"))
    with pytest.raises(ConfigError):
        IndexSpec("NDVI", {"nir": "S2_B08"})


def _tc(coeffs):
    return TasseledCapSpec({c: coeffs[i] for i, c in enumerate(TC_COMPONENTS)})


def test_tasseled_cap_identity_and_zero():
    cube = make_cube(n_dates=3)
    one_hot = [1.0] + [0.0] * (len(S2_BANDS) - 1)
    out = compute_tasseled_cap(cube, _tc([one_hot, [0.0] * 10, one_hot]))
    b02 = np.where(cube.valid, cube.band("S2_B02"), 0.0)
    assert np.array_equal(out["TCW"].values, b02.astype(np.float32))
    assert not out["TCG"].values.any()


def test_tasseled_cap_matches_scalar_loop():
    cube = make_cube(width=4, height=3, n_dates=2, cloud=0.0)
    rng = np.random.default_rng(9)
    coeffs = rng.normal(size=(3, len(S2_BANDS)))
    out = compute_tasseled_cap(cube, _tc(coeffs.tolist()))
    for k, comp in enumerate(TC_COMPONENTS):
        for d in range(2):
            for r in range(3):
                for c in range(4):
                    total = 0.0
                    for b in range(len(S2_BANDS)):
                        total += coeffs[k, b] * float(cube.values[d, b, r, c])
                    assert abs(out[comp].values[d, r, c] - total) < 1e-6


def test_tasseled_cap_coefficient_count_checked():
    with pytest.raises(ConfigError):
        _tc([[1.0], [1.0], [1.0]])
