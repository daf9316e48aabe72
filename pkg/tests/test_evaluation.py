from __future__ import annotations

import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cropmap.errors import ConfigError, ContractError
from cropmap.evaluation import (
    SplitSpec,
    compute_metrics,
    evaluate_multi_run,
    measure_cpu,
    split_polygons,
    transfer_evaluate,
)
from cropmap.rastercube import FeatureRaster

from helpers import block_dataset
from oracles import confusion_oracle


def test_split_counts_per_class():
    _, labels = block_dataset(n_per_class=10, n_classes=3)
    parts = split_polygons(labels, SplitSpec((0.8, 0.1, 0.1), seed=0))
    for p, expected in zip(parts, (8, 1, 1)):
        assert p.polygon_counts() == {1: expected, 2: expected, 3: expected}


def test_split_is_deterministic_and_disjoint():
    _, labels = block_dataset(n_per_class=9, n_classes=4)
    a = split_polygons(labels, SplitSpec(seed=3))
    b = split_polygons(labels, SplitSpec(seed=3))
    assert [p.polygon_ids for p in a] == [p.polygon_ids for p in b]
    ids = [set(p.polygon_ids) for p in a]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert set().union(*ids) == set(labels.polygon_ids)
    c = split_polygons(labels, SplitSpec(seed=4))
    assert [p.polygon_ids for p in a] != [p.polygon_ids for p in c]


def test_no_pixel_leaks_across_partitions():
    _, labels = block_dataset(n_per_class=7)
    parts = split_polygons(labels, SplitSpec(seed=1))
    flat = [set((r * labels.width + c).tolist()) for r, c, _, _ in (p.arrays() for p in parts)]
    assert not (flat[0] & flat[1] or flat[0] & flat[2] or flat[1] & flat[2])


def test_split_spec_validation():
    with pytest.raises(ConfigError):
        SplitSpec((0.5, 0.4))
    with pytest.raises(ConfigError):
        SplitSpec((1.0, 0.0, 0.0))
    with pytest.raises(ConfigError):
        SplitSpec(unit="pixel")


def test_metric_hand_case():
    truth = [1, 1, 1, 2]
    pred = [1, 1, 2, 2]
    rec = compute_metrics(pred, truth, {1: "a", 2: "b"})
    assert rec.accuracy == 0.75
    # F1: class 1 = 0.8, class 2 = 2/3
    assert rec.macro_f1 == pytest.approx((0.8 + 2 / 3) / 2, abs=1e-12)
    assert rec.macro_f1 == pytest.approx(0.7333333, abs=1e-7)
    assert rec.weighted_f1 == pytest.approx((3 * 0.8 + 2 / 3) / 4, abs=1e-12)
    assert rec.confusion.tolist() == [[2, 1], [0, 1]]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 5)), min_size=1, max_size=200))
def test_metrics_match_oracle(pairs):
    truth = [t for t, _ in pairs]
    pred = [p for _, p in pairs]
    rec = compute_metrics(pred, truth, {c: str(c) for c in range(1, 6)})
    acc, macro, weighted = confusion_oracle(pred, truth, range(1, 6))
    assert abs(rec.accuracy - acc) <= 1e-12
    assert abs(rec.macro_f1 - macro) <= 1e-12
    assert abs(rec.weighted_f1 - weighted) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4)), min_size=1, max_size=80), st.randoms())
def test_metrics_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    table = {c: str(c) for c in range(1, 5)}
    a = compute_metrics([p for _, p in pairs], [t for t, _ in pairs], table)
    b = compute_metrics([p for _, p in shuffled], [t for t, _ in shuffled], table)
    assert a.as_dict() == pytest.approx(b.as_dict(), abs=1e-15)


def test_weighted_equals_macro_at_equal_support():
    rng = np.random.default_rng(0)
    truth = np.repeat([1, 2, 3], 50)
    pred = np.where(rng.random(150) < 0.3, rng.integers(1, 4, 150), truth)
    rec = compute_metrics(pred, truth, {1: "a", 2: "b", 3: "c"})
    assert rec.weighted_f1 == pytest.approx(rec.macro_f1, abs=1e-12)


def test_single_run_has_zero_std():
    fr, labels = block_dataset()
    rep = evaluate_multi_run(fr, labels, ["LR"], n_runs=1)
    assert rep.std("accuracy") == 0.0 and rep.n_runs == 1


def test_multi_run_separable_and_reproducible():
    fr, labels = block_dataset()
    a = evaluate_multi_run(fr, labels, ["LR", "MLP"], n_runs=3, seed0=2)
    b = evaluate_multi_run(fr, labels, ["LR", "MLP"], n_runs=3, seed0=2, n_workers=3)
    assert a.mean("accuracy") == 1.0
    assert a.to_json()["runs"] == b.to_json()["runs"]
    assert a.metadata["seeds"] == [2, 3, 4]


def test_one_class_labels_score_perfectly():
    fr, labels = block_dataset(n_classes=2)
    one = labels.subset([e.polygon_id for e in labels.entries if e.class_id == 2])
    rep = evaluate_multi_run(fr, one, ["LR", "RF"], n_runs=2)
    assert rep.aggregate()["accuracy"] == (1.0, 0.0)
    assert rep.aggregate()["macro_f1"] == (1.0, 0.0)


def test_transfer_rejects_feature_mismatch():
    fr, labels = block_dataset(n_features=4)
    other = FeatureRaster(fr.width, fr.height, ("a", "b", "c", "d"), fr.values, "embedding", 2019)
    with pytest.raises(ContractError):
        transfer_evaluate(fr, labels, other, labels, ["LR"])


def test_transfer_rejects_disjoint_tables():
    fr, labels = block_dataset()
    renamed = labels.with_entries([], {9: "other"})
    with pytest.raises(ContractError):
        transfer_evaluate(fr, labels, fr, renamed, ["LR"])


def test_self_transfer_not_below_same_year():
    fr, labels = block_dataset(overlap=0.7, spread=0.6, n_per_class=12)
    same = evaluate_multi_run(fr, labels, ["LR"], n_runs=3)
    self_t = transfer_evaluate(fr, labels, fr, labels, ["LR"], n_runs=3)
    assert self_t.mean("accuracy") >= same.mean("accuracy") - 0.05
    assert self_t.metadata["train_year"] == self_t.metadata["predict_year"]


def test_measure_cpu_baseline_and_heavier_workload():
    def work(n):
        def fn():
            t0 = time.process_time()
            while time.process_time() - t0 < n * 0.02:
                pass
        return fn

    rows = measure_cpu([("base", work(1)), ("double", work(2))], n_runs=3)
    assert rows[0].ratio_mean == 1.0 and rows[0].ratio_interval == 0.0
    assert rows[1].ratio_mean > 1.5


def test_measure_cpu_needs_two_workloads():
    with pytest.raises(ConfigError):
        measure_cpu([("a", lambda: None)])
