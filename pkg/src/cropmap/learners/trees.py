"""Random forest and gradient-boosted tree heads backed by scikit-learn.

Class weights enter as per-sample weights, so the forest uses weighted Gini
impurity and boosting uses weighted gradients/hessians. Forest probabilities
are hard tree-vote fractions rather than averaged leaf distributions.
"""

from __future__ import annotations

import numpy as np
from sklearn.ensemble import HistGradientBoostingClassifier, RandomForestClassifier

from .base import TrainConfig, TrainedModel, derive_seed


def fit(x, y, classes, w, cfg: TrainConfig) -> TrainedModel:
    p = cfg.params
    seed = derive_seed(cfg.seed, 2)
    if cfg.learner == "RF":
        est = RandomForestClassifier(
            n_estimators=p["n_estimators"], criterion="gini", max_features=p["max_features"],
            bootstrap=p["bootstrap"], max_depth=p["max_depth"], random_state=seed, n_jobs=cfg.n_jobs,
        )
    else:
        est = HistGradientBoostingClassifier(
            max_iter=p["max_iter"], max_depth=p["max_depth"], learning_rate=p["learning_rate"],
            max_leaf_nodes=None, early_stopping=False, random_state=seed,
        )
    est.fit(x, y, sample_weight=w)
    if cfg.learner == "RF":
        est.n_jobs = 1
    return TrainedModel(cfg.learner, tuple(int(c) for c in classes), x.shape[1], cfg.seed,
                        estimator=est, metadata={"estimator_seed": seed})


def tree_votes(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    est = model.estimator
    votes = np.zeros((len(x), model.n_classes))
    rows = np.arange(len(x))
    for tree in est.estimators_:
        votes[rows, tree.predict(x).astype(np.int64)] += 1
    return votes


def predict_proba(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    if model.kind == "RF":
        votes = tree_votes(model, x)
        return votes / votes.sum(axis=1, keepdims=True)
    p = model.estimator.predict_proba(x)
    return p / p.sum(axis=1, keepdims=True)
