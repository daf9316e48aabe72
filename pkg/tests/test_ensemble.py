from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cropmap.ensemble import EnsembleModel, aggregate_runs, fit_ensemble, mean_probability, predict_ensemble, select_heads
from cropmap.errors import ConfigError, ContractError
from cropmap.evaluation import labeled_samples
from cropmap.learners import TrainConfig
from cropmap.learners.base import TrainedModel
from cropmap.rastercube import ClassProbabilityMap

from helpers import block_dataset


def fixed_model(p, n_features=2):
    """LR head whose output is ``p`` for every input."""
    p = np.asarray(p, float)
    return TrainedModel("LR", tuple(range(1, len(p) + 1)), n_features, 0,
                        {"W": np.zeros((n_features, len(p))), "b": np.log(p)})


def pmap(probs, class_ids=(1, 2), year=2018):
    probs = np.asarray(probs, float)
    return ClassProbabilityMap(probs.shape[2], probs.shape[1], class_ids, probs,
                               {c: str(c) for c in class_ids}, year)


def test_two_member_mean_hand_case():
    ens = EnsembleModel((fixed_model([0.6, 0.4]), fixed_model([0.2, 0.8])))
    p = ens.predict_proba(np.zeros((1, 2)))
    assert np.allclose(p, [[0.4, 0.6]])
    assert ens.predict(np.zeros((1, 2))).tolist() == [2]


def test_identical_members_reduce_to_member():
    m = fixed_model([0.3, 0.5, 0.2])
    x = np.random.default_rng(0).normal(size=(7, 2))
    assert np.allclose(EnsembleModel((m, m)).predict_proba(x), EnsembleModel((m,)).predict_proba(x))


def test_equal_probabilities_go_to_lowest_class():
    ens = EnsembleModel((fixed_model([0.7, 0.3]), fixed_model([0.3, 0.7])))
    assert ens.predict(np.zeros((3, 2))).tolist() == [1, 1, 1]


def test_member_mismatch_rejected():
    with pytest.raises(ContractError):
        EnsembleModel((fixed_model([0.5, 0.5]), fixed_model([0.2, 0.3, 0.5])))
    with pytest.raises(ContractError):
        EnsembleModel((fixed_model([0.5, 0.5]), fixed_model([0.5, 0.5], n_features=3)))
    with pytest.raises(ContractError):
        EnsembleModel(tuple(fixed_model([0.5, 0.5]) for _ in range(3)))


def test_predict_ensemble_checks_dimension():
    fr, _ = block_dataset(n_features=4)
    with pytest.raises(ContractError):
        predict_ensemble(EnsembleModel((fixed_model([0.5, 0.5], 3),)), fr)


def test_fit_ensemble_single_class_partition_is_constant():
    fr, labels = block_dataset(n_classes=2)
    s = labeled_samples(fr, labels.subset([e.polygon_id for e in labels.entries if e.class_id == 1]))
    ens = fit_ensemble(s, [TrainConfig("LR"), TrainConfig("RF")], seed=0)
    assert all(m.kind == "CONST" for m in ens.members)
    assert set(ens.predict(s.x).tolist()) == {1}


def test_aggregate_single_map_is_its_argmax():
    m = pmap([[[0.9, 0.2]], [[0.1, 0.8]]])
    assert aggregate_runs([m]).class_ids.tolist() == [[1, 2]]


def test_aggregate_dissenting_run():
    a = pmap([[[0.6]], [[0.4]]])
    b = pmap([[[0.1]], [[0.9]]])
    assert aggregate_runs([a, a, b]).class_ids.tolist() == [[2]]  # mean 0.433 vs 0.567
    assert aggregate_runs([a, a]).class_ids.tolist() == [[1]]


def test_aggregate_rejects_mismatched_grid():
    with pytest.raises(ContractError):
        aggregate_runs([pmap(np.full((2, 1, 1), 0.5)), pmap(np.full((2, 1, 2), 0.5))])
    with pytest.raises(ContractError):
        aggregate_runs([])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.randoms(use_true_random=False))
def test_aggregate_is_permutation_invariant(n, rnd):
    rng = np.random.default_rng(rnd.randint(0, 2**31))
    maps = []
    for _ in range(n):
        p = rng.dirichlet(np.ones(3), size=(4, 5)).transpose(2, 0, 1)
        maps.append(pmap(p, (1, 2, 3)))
    shuffled = list(maps)
    rnd.shuffle(shuffled)
    assert np.array_equal(mean_probability(maps).probs, mean_probability(shuffled).probs)


def test_select_heads_needs_two_runs():
    fr, labels = block_dataset()
    with pytest.raises(ConfigError):
        select_heads(fr, labels, ["LR", "MLP"], runs=1)


def test_select_heads_two_learners_both_chosen():
    fr, labels = block_dataset()
    rep = select_heads(fr, labels, ["MLP", "LR"], runs=2)
    assert set(rep.chosen) == {"LR", "MLP"}
    assert rep.chosen == ("LR", "MLP")  # equal scores fall back to canonical order


def test_select_heads_prefers_stronger_learner():
    fr, labels = block_dataset(n_per_class=12, overlap=0.9, spread=0.8, seed=3)
    weak = TrainConfig("GBT", hyperparams={"max_iter": 1, "max_depth": 1, "learning_rate": 0.01})
    rep = select_heads(fr, labels, [TrainConfig("LR"), weak, TrainConfig("MLP")], runs=3)
    assert "GBT" not in rep.chosen
    scores = {l: rep.ranking_score(l) for l in rep.learners}
    assert scores["GBT"] < min(scores["LR"], scores["MLP"])
    assert rep.to_json()["chosen"] == list(rep.chosen)


def test_select_heads_is_deterministic():
    fr, labels = block_dataset(seed=4)
    a = select_heads(fr, labels, ["LR", "MLP", "GBT"], runs=2, seed0=5)
    b = select_heads(fr, labels, ["LR", "MLP", "GBT"], runs=2, seed0=5)
    assert a.scores == b.scores and a.chosen == b.chosen
