"""Polygon-level splits, accuracy/F1 metrics, multi-run and cross-year evaluation."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats as sstats

from .errors import ConfigError, ContractError, CropmapError, DataError
from .learners.base import TrainConfig
from .rastercube import FeatureRaster, LabelSet

LOGGER = logging.getLogger(__name__)

METRICS = ("accuracy", "macro_f1", "weighted_f1")
DEFAULT_FRACTIONS = (0.70, 0.15, 0.15)
FULL_MAP_FRACTIONS = (0.9, 0.1)


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    seed: int = 0
    unit: str = "polygon"

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        if len(self.fractions) not in (2, 3):
            raise ConfigError("split needs (train, val) or (train, val, test) fractions")
        if any(f <= 0 for f in self.fractions):
            raise ConfigError(f"split fractions must be positive: {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions sum to {sum(self.fractions)}, not 1")
        if self.unit != "polygon":
            raise ConfigError("only polygon-level splits are supported")


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of ``n`` items, every part >= 1 when n allows."""
    raw = [n * f for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    for i in range(len(counts)):
        if counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_polygons(labels: LabelSet, spec: SplitSpec) -> tuple[LabelSet, ...]:
    """Stratified polygon-level split; one LabelSet per fraction, no polygon shared."""
    rng = np.random.default_rng(spec.seed)
    k = len(spec.fractions)
    parts: list[list[int]] = [[] for _ in range(k)]
    by_class: dict[int, list[int]] = {}
    for e in labels.entries:
        by_class.setdefault(e.class_id, []).append(e.polygon_id)
    for cid in sorted(by_class):
        ids = np.array(sorted(by_class[cid]))
        ids = ids[rng.permutation(len(ids))]
        if len(ids) < k:
            LOGGER.warning("class %s has %d polygon(s), fewer than %d partitions; all go to train",
                           cid, len(ids), k)
            parts[0].extend(ids.tolist())
            continue
        start = 0
        for i, c in enumerate(_allocate(len(ids), spec.fractions)):
            parts[i].extend(ids[start : start + c].tolist())
            start += c
    return tuple(labels.subset(p) for p in parts)


# --------------------------------------------------------------------------- metrics


@dataclass(frozen=True)
class MetricRecord:
    accuracy: float
    macro_f1: float
    weighted_f1: float
    per_class_f1: dict[int, float]
    classes: tuple[int, ...]
    confusion: np.ndarray  # rows = truth, cols = prediction, ordered by ``classes``

    def as_dict(self) -> dict:
        return {m: getattr(self, m) for m in METRICS}


def compute_metrics(pred, truth, class_table: Mapping[int, str]) -> MetricRecord:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape or pred.ndim != 1 or len(pred) == 0:
        raise ContractError("pred and truth must be equal-length non-empty vectors")
    classes = tuple(sorted(int(c) for c in class_table))
    lookup = {c: i for i, c in enumerate(classes)}
    for name, vec in (("prediction", pred), ("truth", truth)):
        stray = set(np.unique(vec).tolist()) - set(classes)
        if stray:
            raise DataError(f"{name} contains labels outside the class table: {sorted(stray)}")
    k = len(classes)
    ti = np.array([lookup[c] for c in truth.tolist()])
    pi = np.array([lookup[c] for c in pred.tolist()])
    confusion = np.bincount(ti * k + pi, minlength=k * k).reshape(k, k)
    tp = np.diag(confusion).astype(np.float64)
    support = confusion.sum(axis=1).astype(np.float64)
    predicted = confusion.sum(axis=0).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    present = support > 0
    accuracy = float(tp.sum() / confusion.sum())
    macro = float(f1[present].mean())
    weighted = float((f1 * support).sum() / support.sum())
    return MetricRecord(accuracy, macro, weighted, {classes[i]: float(f1[i]) for i in np.flatnonzero(present)},
                        classes, confusion)


# --------------------------------------------------------------------------- reports


@dataclass
class RunResult:
    run: int
    seed: int
    metrics: MetricRecord | None
    error: str | None = None


@dataclass
class EvaluationReport:
    runs: list[RunResult]
    metadata: dict = field(default_factory=dict)

    @property
    def completed(self) -> list[RunResult]:
        return [r for r in self.runs if r.metrics is not None]

    @property
    def n_runs(self) -> int:
        return len(self.completed)

    @property
    def n_failed(self) -> int:
        return len(self.runs) - self.n_runs

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(r.metrics, metric) for r in self.completed])

    def mean(self, metric: str) -> float:
        return float(self.values(metric).mean()) if self.n_runs else float("nan")

    def std(self, metric: str) -> float:
        """Sample standard deviation (n-1); 0 for a single run."""
        v = self.values(metric)
        return float(v.std(ddof=1)) if len(v) > 1 else 0.0

    def aggregate(self) -> dict[str, tuple[float, float]]:
        return {m: (self.mean(m), self.std(m)) for m in METRICS}

    def confusion_total(self) -> np.ndarray | None:
        done = self.completed
        return sum(r.metrics.confusion for r in done) if done else None

    def to_json(self) -> dict:
        return {
            "metadata": self.metadata,
            "n_runs": self.n_runs,
            "n_failed": self.n_failed,
            "aggregate": {m: {"mean": a, "std": s} for m, (a, s) in self.aggregate().items()},
            "runs": [
                {"run": r.run, "seed": r.seed, "error": r.error,
                 **({} if r.metrics is None else {
                     **r.metrics.as_dict(),
                     "classes": list(r.metrics.classes),
                     "confusion": r.metrics.confusion.tolist(),
                 })}
                for r in self.runs
            ],
        }


# --------------------------------------------------------------------------- sample extraction


@dataclass(frozen=True)
class Samples:
    x: np.ndarray
    y: np.ndarray
    polygon_ids: np.ndarray

    def __len__(self):
        return len(self.y)


def labeled_samples(features: FeatureRaster, labels: LabelSet) -> Samples:
    if (features.width, features.height) != (labels.width, labels.height):
        raise ContractError("feature raster and label grid differ")
    rows, cols, cls, pid = labels.arrays()
    return Samples(features.matrix(rows, cols), cls, pid)


def _select(samples: Samples, labels: LabelSet) -> Samples:
    keep = np.isin(samples.polygon_ids, labels.polygon_ids)
    return Samples(samples.x[keep], samples.y[keep], samples.polygon_ids[keep])


def _run_parallel(fn: Callable[[int], RunResult], n_runs: int, n_workers: int) -> list[RunResult]:
    if n_workers <= 1:
        return [fn(r) for r in range(n_runs)]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, range(n_runs)))


def _guarded(fn: Callable[[int], RunResult], seed_of: Callable[[int], int]) -> Callable[[int], RunResult]:
    def run(r: int) -> RunResult:
        try:
            return fn(r)
        except CropmapError as exc:
            LOGGER.warning("run %d failed: %s", r, exc)
            return RunResult(r, seed_of(r), None, str(exc))
    return run


def _coerce_heads(heads) -> tuple[TrainConfig, ...]:
    out = tuple(h if isinstance(h, TrainConfig) else TrainConfig(h) for h in heads)
    if not out:
        raise ConfigError("at least one classifier head is required")
    return out


def evaluate_multi_run(
    features: FeatureRaster,
    labels: LabelSet,
    heads: Sequence[TrainConfig | str],
    n_runs: int = 20,
    seed0: int = 0,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    n_workers: int = 1,
    metadata: Mapping | None = None,
) -> EvaluationReport:
    """Fresh polygon split and fresh model seeds per run; held-out test metrics."""
    from .ensemble import fit_ensemble

    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    if len(fractions) != 3:
        raise ConfigError("multi-run evaluation needs (train, val, test) fractions")
    heads = _coerce_heads(heads)
    samples = labeled_samples(features, labels)

    def one(r: int) -> RunResult:
        seed = seed0 + r
        train_l, val_l, test_l = split_polygons(labels, SplitSpec(tuple(fractions), seed))
        tr, va, te = _select(samples, train_l), _select(samples, val_l), _select(samples, test_l)
        if len(te) == 0:
            raise DataError("empty test partition")
        model = fit_ensemble(tr, heads, seed, va)
        pred = model.predict(te.x)
        return RunResult(r, seed, compute_metrics(pred, te.y, labels.class_table))

    runs = _run_parallel(_guarded(one, lambda r: seed0 + r), n_runs, n_workers)
    meta = {
        "input": features.source,
        "task": labels.task,
        "year": labels.year,
        "heads": [h.learner for h in heads],
        "fractions": list(fractions),
        "seeds": [seed0 + r for r in range(n_runs)],
        "std": "sample (n-1)",
        **(metadata or {}),
    }
    return EvaluationReport(runs, meta)


def transfer_evaluate(
    train_features: FeatureRaster,
    train_labels: LabelSet,
    predict_features: FeatureRaster,
    predict_labels: LabelSet,
    heads: Sequence[TrainConfig | str],
    n_runs: int = 5,
    seed0: int = 0,
    fractions: Sequence[float] = FULL_MAP_FRACTIONS,
    n_workers: int = 1,
    metadata: Mapping | None = None,
) -> EvaluationReport:
    """Train on one year with a (train, val) split and score every labeled pixel of another.

    Runs differ only in the validation subset and model seeds.
    """
    from .ensemble import fit_ensemble

    if tuple(train_features.feature_names) != tuple(predict_features.feature_names):
        a, b = train_features.feature_names, predict_features.feature_names
        diff = sorted(set(a) ^ set(b))
        raise ContractError(f"feature manifests differ between years: {diff[:10] or 'order differs'}")
    shared = set(train_labels.class_table) & set(predict_labels.class_table)
    if not shared:
        raise ContractError("training and prediction class tables are disjoint")
    unseen = set(predict_labels.class_table) - set(train_labels.class_table)
    if unseen:
        LOGGER.warning("prediction year has classes absent from training: %s", sorted(unseen))
    heads = _coerce_heads(heads)
    if len(fractions) != 2:
        raise ConfigError("transfer training uses (train, val) fractions")
    samples = labeled_samples(train_features, train_labels)
    target = labeled_samples(predict_features, predict_labels)
    table = {**train_labels.class_table, **predict_labels.class_table}

    def one(r: int) -> RunResult:
        seed = seed0 + r
        train_l, val_l = split_polygons(train_labels, SplitSpec(tuple(fractions), seed))
        model = fit_ensemble(_select(samples, train_l), heads, seed, _select(samples, val_l))
        return RunResult(r, seed, compute_metrics(model.predict(target.x), target.y, table))

    runs = _run_parallel(_guarded(one, lambda r: seed0 + r), n_runs, n_workers)
    meta = {
        "input": train_features.source,
        "task": train_labels.task,
        "train_year": train_labels.year,
        "predict_year": predict_labels.year,
        "heads": [h.learner for h in heads],
        "fractions": list(fractions),
        "seeds": [seed0 + r for r in range(n_runs)],
        "std": "sample (n-1)",
        "note": "label geometries may repeat across years; spatial overlap is not corrected",
        **(metadata or {}),
    }
    return EvaluationReport(runs, meta)


# --------------------------------------------------------------------------- CPU accounting


@dataclass(frozen=True)
class CpuRow:
    name: str
    wall_mean: float
    cpu_mean: float
    ratio_mean: float
    ratio_interval: float
    n_runs: int


def measure_cpu(workloads: Sequence[tuple[str, Callable[[], object]]], baseline: str | None = None,
                n_runs: int = 5, confidence: float = 0.95) -> list[CpuRow]:
    """Time each workload ``n_runs`` times (interleaved) and report CPU time relative to ``baseline``.

    Ratios are paired per run; the interval is the half-width of a Student-t
    confidence interval on the per-run ratios.
    """
    workloads = list(workloads)
    if len(workloads) < 2:
        raise ConfigError("CPU comparison needs at least two workloads")
    names = [n for n, _ in workloads]
    baseline = names[0] if baseline is None else baseline
    if baseline not in names:
        raise ConfigError(f"baseline {baseline!r} not among workloads {names}")
    wall = {n: [] for n in names}
    cpu = {n: [] for n in names}
    for _ in range(n_runs):
        for name, fn in workloads:
            w0, c0 = time.perf_counter(), time.process_time()
            fn()
            cpu[name].append(max(time.process_time() - c0, 1e-9))
            wall[name].append(time.perf_counter() - w0)
    rows = []
    base = np.array(cpu[baseline])
    for name in names:
        ratios = np.array(cpu[name]) / base
        if name == baseline:
            ratios = np.ones(n_runs)
        half = 0.0
        if n_runs > 1:
            half = float(sstats.t.ppf(0.5 + confidence / 2, n_runs - 1) * ratios.std(ddof=1) / np.sqrt(n_runs))
        rows.append(CpuRow(name, float(np.mean(wall[name])), float(np.mean(cpu[name])),
                           float(ratios.mean()), half, n_runs))
    return rows
