from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cropmap.errors import ContractError
from cropmap.landchange import apply_crop_mask, core_cropland, cropland_change
from cropmap.rastercube import NODATA, ClassMap, ClassProbabilityMap

TABLE = {1: "cropland", 2: "other"}


def cmap(ids, year=2018):
    ids = np.asarray(ids)
    return ClassMap(ids.shape[1], ids.shape[0], ids, TABLE, year)


def test_change_hand_count():
    a = np.full((10, 10), 2)
    b = np.full((10, 10), 2)
    a.flat[:5] = 1  # lost
    b.flat[10:12] = 1  # gained
    rep = cropland_change(cmap(a), cmap(b, 2019), 1)
    assert (rep.decrease_pct, rep.increase_pct, rep.aggregate_pct) == (5.0, 2.0, 7.0)
    assert rep.transitions["crop_to_other"] == 5 and rep.mapped_pixels == 100


def test_identical_maps_have_no_change():
    a = np.random.default_rng(0).integers(1, 3, size=(6, 7))
    rep = cropland_change(cmap(a), cmap(a), 1)
    assert rep.aggregate_pct == 0.0


def test_nodata_excluded_from_area():
    a = np.array([[1, 1, NODATA, 2]])
    b = np.array([[2, 1, 1, 2]])
    rep = cropland_change(cmap(a), cmap(b), 1)
    assert rep.mapped_pixels == 3 and rep.decrease_pct == pytest.approx(100 / 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_swap_exchanges_decrease_and_increase(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(1, 3, size=(2, 5, 6))
    ab, ba = cropland_change(cmap(a), cmap(b), 1), cropland_change(cmap(b), cmap(a), 1)
    assert ab.decrease_pct == ba.increase_pct and ab.increase_pct == ba.decrease_pct


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_core_is_intersection(seed):
    rng = np.random.default_rng(seed)
    maps = [cmap(rng.integers(1, 3, size=(8, 9)), 2018 + i) for i in range(3)]
    core = core_cropland(maps, 1)
    assert core.percent_of_area <= min(100 * (m.class_ids == 1).mean() for m in maps) + 1e-12
    for m in maps:
        assert not (core.mask & (m.class_ids != 1)).any()
    two = core_cropland(maps[:2], 1)
    assert not (core.mask & ~two.mask).any()


def test_core_rejects_mismatched_grids():
    with pytest.raises(ContractError):
        core_cropland([cmap(np.ones((2, 2))), cmap(np.ones((2, 3)))], 1)


def test_core_as_class_map():
    core = core_cropland([cmap([[1, 2], [1, 1]]), cmap([[1, 1], [2, 1]])], 1)
    assert core.as_class_map().class_ids.tolist() == [[1, 0], [0, 1]]
    assert core.percent_of_area == 50.0


def _probs(h, w, seed=0):
    p = np.random.default_rng(seed).dirichlet(np.ones(3), size=(h, w)).transpose(2, 0, 1)
    return ClassProbabilityMap(w, h, (3, 4, 5), p, {3: "a", 4: "b", 5: "c"}, 2019)


def test_crop_mask_empty_full_and_partial():
    pm = _probs(4, 5)
    empty = core_cropland([cmap(np.full((4, 5), 2))], 1)
    full = core_cropland([cmap(np.full((4, 5), 1))], 1)
    assert (apply_crop_mask(pm, empty).class_ids == NODATA).all()
    assert np.array_equal(apply_crop_mask(pm, full).class_ids, pm.argmax().class_ids)
    part = core_cropland([cmap(np.random.default_rng(2).integers(1, 3, size=(4, 5)))], 1)
    out = apply_crop_mask(pm, part).class_ids
    assert int((out != NODATA).sum()) == int(part.mask.sum())


def test_crop_mask_grid_mismatch():
    with pytest.raises(ContractError):
        apply_crop_mask(_probs(4, 5), core_cropland([cmap(np.ones((4, 4)))], 1))
