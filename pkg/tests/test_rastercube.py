from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cropmap.errors import ConfigError, ContractError, FormatError, GeometryError, SizeError
from cropmap.rastercube import (
    NODATA,
    ClassMap,
    ClassProbabilityMap,
    FeatureRaster,
    argmax_lowest,
    merge_classes,
    rasterize_labels,
    read_class_map,
    read_cube,
    read_feature_raster,
    read_labels,
    read_probability_map,
    write_class_map,
    write_cube,
    write_feature_raster,
    write_labels,
    write_probability_map,
)

from conftest import make_cube


def even_odd(px: float, py: float, ring) -> bool:
    """Reference crossing count along a ray toward +x."""
    inside = False
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        if (y1 > py) == (y2 > py):
            continue
        x_at = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        if x_at > px:
            inside = not inside
    return inside


def brute_rasterize(polygons, width, height):
    owner = np.full((height, width), -1)
    for pid, _, ring in polygons:
        for r in range(height):
            for c in range(width):
                if even_odd(c + 0.5, r + 0.5, ring):
                    owner[r, c] = pid
    return owner


def owner_map(labels):
    out = np.full((labels.height, labels.width), -1)
    for e in labels.entries:
        out[e.pixels[:, 0], e.pixels[:, 1]] = e.polygon_id
    return out


def test_cube_round_trip(tmp_path):
    cube = make_cube()
    write_cube(cube, tmp_path / "c")
    back = read_cube(tmp_path / "c")
    assert back.manifest == cube.manifest
    assert np.array_equal(back.values, cube.values)
    assert np.array_equal(back.valid, cube.valid)


def test_cube_manifest_has_exact_keys(tmp_path):
    write_cube(make_cube(), tmp_path / "c")
    data = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert set(data) == {"width", "height", "dates", "bands", "pixel_size_m", "year"}


def test_cube_truncated_payload_is_size_error(tmp_path):
    write_cube(make_cube(), tmp_path / "c")
    p = tmp_path / "c" / "values.bin"
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(SizeError):
        read_cube(tmp_path / "c")


def test_cube_missing_field_names_field(tmp_path):
    write_cube(make_cube(), tmp_path / "c")
    m = tmp_path / "c" / "manifest.json"
    data = json.loads(m.read_text())
    del data["bands"]
    m.write_text(json.dumps(data))
    with pytest.raises(FormatError) as exc:
        read_cube(tmp_path / "c")
    assert exc.value.field == "bands"


def test_cube_unexpected_key_rejected(tmp_path):
    write_cube(make_cube(), tmp_path / "c")
    m = tmp_path / "c" / "manifest.json"
    data = json.loads(m.read_text())
    data["extra"] = 1
    m.write_text(json.dumps(data))
    with pytest.raises(FormatError):
        read_cube(tmp_path / "c")


def test_cube_arrays_are_read_only():
    cube = make_cube()
    with pytest.raises(ValueError):
        cube.values[0, 0, 0, 0] = 1.0


def test_feature_raster_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    v = rng.normal(size=(3, 4, 5)).astype(np.float32)
    valid = rng.random(v.shape) > 0.2
    fr = FeatureRaster(5, 4, ["a", "b", "c"], v, "stm", 2019, valid, ~valid, {"k": 1})
    write_feature_raster(fr, tmp_path / "f")
    back = read_feature_raster(tmp_path / "f")
    assert back.feature_names == fr.feature_names
    assert np.array_equal(back.values, v)
    assert np.array_equal(back.valid, valid) and np.array_equal(back.imputed, ~valid)
    assert back.metadata == {"k": 1}


def test_feature_matrix_is_pixel_major():
    v = np.arange(2 * 2 * 3, dtype=np.float32).reshape(2, 2, 3)
    fr = FeatureRaster(3, 2, ["a", "b"], v, "raw", 2018)
    m = fr.matrix()
    assert m.shape == (6, 2)
    assert m[4].tolist() == [v[0, 1, 1], v[1, 1, 1]]
    assert fr.matrix(np.array([1]), np.array([1])).tolist() == [m[4].tolist()]


def test_square_rasterization_and_label_round_trip(tmp_path):
    labels = rasterize_labels([(7, 2, [(1, 1), (4, 1), (4, 3), (1, 3)])], (6, 5), {1: "a", 2: "b"})
    assert sorted(map(tuple, labels.entries[0].pixels.tolist())) == [(1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (2, 3)]
    write_labels(labels, tmp_path / "l")
    back = read_labels(tmp_path / "l")
    assert back.class_table == labels.class_table
    assert np.array_equal(owner_map(back), owner_map(labels))


def test_later_polygon_wins_and_overlap_counted():
    a = (1, 1, [(0, 0), (4, 0), (4, 4), (0, 4)])
    b = (2, 2, [(2, 2), (6, 2), (6, 6), (2, 6)])
    labels = rasterize_labels([a, b], (6, 6))
    assert labels.metadata["overlap_pixels"] == 4
    own = owner_map(labels)
    assert (own[2:4, 2:4] == 2).all()


def test_polygon_errors():
    with pytest.raises(GeometryError):
        rasterize_labels([(1, 1, [(0, 0), (1, 1)])], (4, 4))
    sq = [(0, 0), (2, 0), (2, 2)]
    with pytest.raises(GeometryError):
        rasterize_labels([(1, 1, sq), (1, 1, sq)], (4, 4))


def test_polygon_outside_grid_dropped():
    labels = rasterize_labels([(1, 1, [(10, 10), (12, 10), (12, 12)]), (2, 1, [(0, 0), (3, 0), (3, 3)])], (4, 4))
    assert labels.polygon_ids == [2]


coord = st.floats(min_value=-2.0, max_value=14.0, allow_nan=False).map(lambda v: round(v, 3) + 0.0137)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.tuples(coord, coord), min_size=3, max_size=7, unique=True), min_size=1, max_size=4))
def test_rasterization_matches_crossing_oracle(rings):
    polys = [(i + 1, 1, ring) for i, ring in enumerate(rings)]
    labels = rasterize_labels(polys, (12, 10))
    assert np.array_equal(owner_map(labels), brute_rasterize(polys, 12, 10))


def test_merge_classes():
    polys = [(1, 1, [(0, 0), (2, 0), (2, 2), (0, 2)]), (2, 3, [(2, 2), (4, 2), (4, 4), (2, 4)])]
    labels = rasterize_labels(polys, (4, 4), {1: "a", 2: "b", 3: "c"})
    merged = merge_classes(labels, {3: 1})
    assert merged.class_table == {1: "a"}
    assert [e.class_id for e in merged.entries] == [1, 1]
    with pytest.raises(ConfigError):
        merge_classes(labels, {3: 9})
    with pytest.raises(ConfigError):
        merge_classes(labels, {8: 1})


def test_class_and_probability_maps_round_trip(tmp_path):
    ids = np.array([[1, 2], [NODATA, 1]])
    cm = ClassMap(2, 2, ids, {1: "a", 2: "b"}, 2021)
    write_class_map(cm, tmp_path / "m")
    back = read_class_map(tmp_path / "m")
    assert np.array_equal(back.class_ids, ids) and back.year == 2021
    probs = np.array([[[0.5, 0.2], [0.1, 0.9]], [[0.5, 0.8], [0.9, 0.1]]])
    pm = ClassProbabilityMap(2, 2, (1, 2), probs, {1: "a", 2: "b"})
    write_probability_map(pm, tmp_path / "p")
    assert np.array_equal(read_probability_map(tmp_path / "p").probs, probs.astype(np.float32))
    assert pm.argmax().class_ids.tolist() == [[1, 2], [2, 1]]


def test_class_map_rejects_unknown_ids():
    with pytest.raises(ContractError):
        ClassMap(1, 1, np.array([[5]]), {1: "a"})


def test_argmax_ties_go_to_lowest_id():
    labels, ties = argmax_lowest(np.array([[0.5, 0.5], [0.2, 0.8]]), (3, 7), axis=1)
    assert labels.tolist() == [3, 7] and ties == 1


def test_tiny_cube_layout_read_back(tmp_path):
    d = tmp_path / "c"
    d.mkdir()
    (d / "manifest.json").write_text(json.dumps(
        {"width": 2, "height": 2, "dates": ["2018-06-01"], "bands": ["S2_B02"], "pixel_size_m": 10.0, "year": 2018}))
    (d / "values.bin").write_bytes(np.array([0.1, 0.2, 0.3, 0.4], dtype="<f4").tobytes())
    (d / "valid.bin").write_bytes(bytes([1, 1, 1, 1]))
    cube = read_cube(d)
    assert cube.values[0, 0, 1, 1] == np.float32(0.4)
    assert cube.values[0, 0, 0, 1] == np.float32(0.2)


def test_manifest_dates_exceed_payload(tmp_path):
    cube = make_cube(n_dates=2)
    write_cube(cube, tmp_path / "c")
    m = tmp_path / "c" / "manifest.json"
    data = json.loads(m.read_text())
    data["dates"].append("2018-12-30")
    m.write_text(json.dumps(data))
    with pytest.raises(SizeError):
        read_cube(tmp_path / "c")


def test_round_trip_is_byte_identical_on_random_cubes(tmp_path):
    for i in range(100):
        cube = make_cube(width=8, height=8, n_dates=4, bands=("S2_B02", "S2_B03", "S2_B04"), seed=i)
        a, b = tmp_path / f"a{i}", tmp_path / f"b{i}"
        write_cube(cube, a)
        write_cube(read_cube(a), b)
        for name in ("values.bin", "valid.bin", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


def test_random_convex_polygons_on_32_grid():
    rng = np.random.default_rng(5)
    for _ in range(25):
        center = rng.uniform(4, 28, 2)
        angles = np.sort(rng.uniform(0, 2 * np.pi, rng.integers(3, 9)))
        radius = rng.uniform(2, 12)
        ring = [(center[0] + radius * np.cos(a), center[1] + radius * np.sin(a)) for a in angles]
        labels = rasterize_labels([(1, 1, ring)], (32, 32))
        assert np.array_equal(owner_map(labels), brute_rasterize([(1, 1, ring)], 32, 32))


def test_merge_preserves_pixel_counts_and_empty_rules_identity():
    rng = np.random.default_rng(2)
    polys = [(i, int(rng.integers(1, 5)), [(x, y), (x + 3, y), (x + 3, y + 3), (x, y + 3)])
             for i, (x, y) in enumerate([(0, 0), (4, 0), (8, 0), (0, 4), (4, 4), (8, 4)])]
    labels = rasterize_labels(polys, (12, 8), {1: "a", 2: "b", 3: "bissap", 4: "hibiscus"})
    assert merge_classes(labels, {}) is labels
    merged = merge_classes(labels, {3: 1, 4: 1})
    assert merged.n_pixels == labels.n_pixels
    before = labels.pixel_counts()
    assert merged.pixel_counts().get(1, 0) == before[1] + before[3] + before[4]
