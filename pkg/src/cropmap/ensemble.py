"""Seeded classifier-head selection and two-head probability-averaging ensembles."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ContractError, CropmapError
from .evaluation import (
    DEFAULT_FRACTIONS,
    METRICS,
    Samples,
    SplitSpec,
    _select,
    compute_metrics,
    labeled_samples,
    split_polygons,
)
from .learners.base import LEARNERS, TrainConfig, TrainedModel, constant_model, derive_seed, predict_proba, train
from .rastercube import ClassMap, ClassProbabilityMap, FeatureRaster, LabelSet, argmax_lowest

LOGGER = logging.getLogger(__name__)


@dataclass
class EnsembleModel:
    """Members share class list and feature dimension; output is their mean probability."""

    members: tuple[TrainedModel, ...]
    class_table: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.members = tuple(self.members)
        if not 1 <= len(self.members) <= 2:
            raise ContractError(f"ensembles hold one or two members, got {len(self.members)}")
        first = self.members[0]
        for m in self.members[1:]:
            if m.classes != first.classes:
                raise ContractError(f"member class lists differ: {first.classes} vs {m.classes}")
            if m.n_features != first.n_features:
                raise ContractError("member feature dimensions differ")
        if not self.class_table:
            self.class_table = {c: str(c) for c in first.classes}

    @property
    def classes(self) -> tuple[int, ...]:
        return self.members[0].classes

    @property
    def n_features(self) -> int:
        return self.members[0].n_features

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        probs = [predict_proba(m, x) for m in self.members]
        if len(probs) == 1:
            return probs[0]
        return (probs[0] + probs[1]) / 2.0

    def predict(self, x: np.ndarray) -> np.ndarray:
        labels, _ = argmax_lowest(self.predict_proba(x), self.classes, axis=1)
        return labels.astype(np.int64)


def fit_ensemble(train_s: Samples, heads: Sequence[TrainConfig], seed: int, val: Samples | None = None,
                 class_table: Mapping[int, str] | None = None) -> EnsembleModel:
    """Train every head on ``train_s`` with seeds derived from ``seed`` and the head position."""
    if len(train_s) == 0:
        raise ContractError("empty training partition")
    classes = np.unique(train_s.y)
    members = []
    for i, head in enumerate(heads):
        cfg = head.with_seed(derive_seed(seed, i))
        if len(classes) == 1:
            members.append(constant_model(int(classes[0]), train_s.x.shape[1], cfg.seed))
            continue
        v = None if val is None or len(val) == 0 else (val.x, val.y)
        members.append(train(train_s.x, train_s.y, cfg, val=v))
    return EnsembleModel(tuple(members), class_table or {})


def predict_ensemble(model: EnsembleModel, features: FeatureRaster, chunk: int = 65536) -> ClassProbabilityMap:
    """Mean member probabilities for every pixel; ties in the argmax go to the lowest class id."""
    if features.n_features != model.n_features:
        raise ContractError(f"raster has {features.n_features} features, model expects {model.n_features}")
    x = features.matrix()
    out = np.empty((len(x), len(model.classes)))
    for s in range(0, len(x), chunk):
        out[s : s + chunk] = model.predict_proba(x[s : s + chunk])
    _, ties = argmax_lowest(out, model.classes, axis=1)
    if ties:
        LOGGER.info("%d pixel(s) with tied ensemble probabilities resolved to the lower class id", ties)
    probs = out.T.reshape(len(model.classes), features.height, features.width)
    table = {c: model.class_table.get(c, str(c)) for c in model.classes}
    return ClassProbabilityMap(features.width, features.height, model.classes, probs, table, features.year, ties)


def mean_probability(prob_maps: Sequence[ClassProbabilityMap]) -> ClassProbabilityMap:
    """Per-pixel mean over runs.

    Run values are sorted before summation so the result does not depend on run order.
    """
    if not prob_maps:
        raise ContractError("no probability maps to aggregate")
    first = prob_maps[0]
    for pm in prob_maps[1:]:
        if (pm.width, pm.height) != (first.width, first.height) or pm.class_ids != first.class_ids:
            raise ContractError("probability maps differ in grid or class list")
        if pm.class_table != first.class_table:
            raise ContractError("probability maps differ in class table")
    stack = np.sort(np.stack([pm.probs for pm in prob_maps]), axis=0)
    total = np.zeros(stack.shape[1:])
    for layer in stack:
        total += layer
    mean = total / len(prob_maps)
    _, ties = argmax_lowest(mean, first.class_ids, axis=0)
    return ClassProbabilityMap(first.width, first.height, first.class_ids, mean, first.class_table, first.year, ties)


def aggregate_runs(prob_maps: Sequence[ClassProbabilityMap]) -> ClassMap:
    """Mean probabilities over runs, then argmax with ties to the lowest class id."""
    mean = mean_probability(prob_maps)
    if mean.ties:
        LOGGER.info("%d tied pixel(s) in run aggregation resolved to the lower class id", mean.ties)
    return mean.argmax()


# --------------------------------------------------------------------------- head selection


@dataclass
class SelectionReport:
    runs: int
    learners: tuple[str, ...]
    scores: dict[str, dict[str, list[float]]]
    chosen: tuple[str, str]
    excluded: dict[str, str] = field(default_factory=dict)
    tie_broken: bool = False
    metadata: dict = field(default_factory=dict)

    def mean(self, learner: str, metric: str) -> float:
        return float(np.mean(self.scores[learner][metric]))

    def std(self, learner: str, metric: str) -> float:
        v = self.scores[learner][metric]
        return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0

    def ranking_score(self, learner: str) -> float:
        """Unweighted mean of the three metric means."""
        return float(np.mean([self.mean(learner, m) for m in METRICS]))

    def to_json(self) -> dict:
        return {
            "runs": self.runs,
            "learners": list(self.learners),
            "chosen": list(self.chosen),
            "excluded": self.excluded,
            "tie_broken": self.tie_broken,
            "summary": {
                l: {m: {"mean": self.mean(l, m), "std": self.std(l, m)} for m in METRICS}
                | {"ranking_score": self.ranking_score(l)}
                for l in self.learners if l not in self.excluded
            },
            "metadata": self.metadata,
        }


def select_heads(
    features: FeatureRaster,
    labels: LabelSet,
    learners: Sequence[TrainConfig | str] = LEARNERS,
    runs: int = 200,
    seed0: int = 0,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
) -> SelectionReport:
    """Train and score each learner ``runs`` times on fresh polygon splits; keep the top two.

    Run ``r`` uses split seed ``seed0 + r``; each learner's model seed is derived
    from that and the learner's position in the canonical learner order.
    """
    if runs < 2:
        raise ConfigError(f"selection needs at least 2 runs, got {runs}")
    cfgs = [c if isinstance(c, TrainConfig) else TrainConfig(c) for c in learners]
    names = [c.learner for c in cfgs]
    if len(cfgs) < 2 or len(set(names)) != len(names):
        raise ConfigError(f"selection needs at least two distinct learners, got {names}")
    samples = labeled_samples(features, labels)
    scores = {n: {m: [] for m in METRICS} for n in names}
    excluded: dict[str, str] = {}
    for r in range(runs):
        seed = seed0 + r
        train_l, val_l, test_l = split_polygons(labels, SplitSpec(tuple(fractions), seed))
        tr, va, te = _select(samples, train_l), _select(samples, val_l), _select(samples, test_l)
        for cfg in cfgs:
            if cfg.learner in excluded:
                continue
            try:
                model = fit_ensemble(tr, [cfg], derive_seed(seed, LEARNERS.index(cfg.learner)), va)
                rec = compute_metrics(model.predict(te.x), te.y, labels.class_table)
            except CropmapError as exc:
                LOGGER.warning("learner %s failed in run %d and is excluded: %s", cfg.learner, r, exc)
                excluded[cfg.learner] = f"run {r}: {exc}"
                continue
            for m in METRICS:
                scores[cfg.learner][m].append(getattr(rec, m))
    alive = [n for n in names if n not in excluded]
    if len(alive) < 2:
        raise ConfigError(f"fewer than two learners survived selection: {alive}; excluded {excluded}")
    report = SelectionReport(runs, tuple(names), scores, ("", ""), excluded)
    ranked = sorted(alive, key=lambda n: (-report.ranking_score(n), LEARNERS.index(n)))
    report.chosen = (ranked[0], ranked[1])
    if len(ranked) > 2 and report.ranking_score(ranked[1]) == report.ranking_score(ranked[2]):
        report.tie_broken = True
    report.metadata = {
        "input": features.source,
        "task": labels.task,
        "year": labels.year,
        "seeds": [seed0, seed0 + runs - 1],
        "ranking": "mean of accuracy, macro-F1 and weighted-F1 means; ties to canonical learner order",
        "resampling": "split and model seeds both refreshed per run",
        "order": ranked,
    }
    return report
