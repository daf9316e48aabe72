"""Training configuration, fitted-model container and the learner dispatch."""

from __future__ import annotations

import io
import json
import pickle
import struct
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..embeddings import NormalizationRecord, fit_normalization
from ..errors import ConfigError, ContractError, DataError, FormatError
from ..rastercube import LabelSet

LEARNERS = ("LR", "MLP", "RF", "GBT")
FOCAL_LEARNERS = ("LR", "MLP")

DEFAULT_HYPERPARAMS: dict[str, dict[str, Any]] = {
    "LR": {"l2": 1e-4, "tol": 1e-8, "max_iter": 1000},
    "MLP": {"hidden": (128, 128), "learning_rate": 1e-3, "batch_size": 256, "max_epochs": 200,
            "patience": 10, "val_fraction": 0.1},
    "RF": {"n_estimators": 200, "max_features": "sqrt", "bootstrap": True, "max_depth": None},
    "GBT": {"max_iter": 200, "max_depth": 6, "learning_rate": 0.1},
}


def derive_seed(master: int, *keys: int) -> int:
    """Child seed for ``keys`` under ``master``: first 32-bit word of ``SeedSequence(master, spawn_key=keys)``.

    Used for per-run, per-learner and per-tree streams so results never depend
    on the order in which work is scheduled.
    """
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class TrainConfig:
    learner: str
    seed: int = 0
    class_weights: Mapping[int, float] | str | None = "balanced"
    focal_gamma: float = 2.0
    focal_alpha: float | Mapping[int, float] = 1.0
    hyperparams: Mapping[str, Any] = field(default_factory=dict)
    normalization: str | None = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.learner not in LEARNERS:
            raise ConfigError(f"unknown learner {self.learner!r}; choose from {LEARNERS}")
        if not np.isfinite(self.focal_gamma) or self.focal_gamma < 0:
            raise ConfigError(f"focal_gamma must be finite and >= 0, got {self.focal_gamma}")
        alphas = self.focal_alpha.values() if isinstance(self.focal_alpha, Mapping) else [self.focal_alpha]
        if any(not (0 < a <= 1) for a in alphas):
            raise ConfigError("focal_alpha must lie in (0, 1]")
        if isinstance(self.class_weights, Mapping):
            if any(not (w > 0) for w in self.class_weights.values()):
                raise ConfigError("class weights must be positive")
        elif self.class_weights not in (None, "balanced"):
            raise ConfigError(f"class_weights must be a map, 'balanced' or None, got {self.class_weights!r}")
        unknown = set(self.hyperparams) - set(DEFAULT_HYPERPARAMS[self.learner])
        if unknown:
            raise ConfigError(f"unknown {self.learner} hyperparameters: {sorted(unknown)}")

    @property
    def params(self) -> dict[str, Any]:
        return {**DEFAULT_HYPERPARAMS[self.learner], **self.hyperparams}

    @property
    def normalization_method(self) -> str:
        if self.normalization is not None:
            return self.normalization
        return "zscore" if self.learner in FOCAL_LEARNERS else "none"

    def with_seed(self, seed: int) -> "TrainConfig":
        return TrainConfig(self.learner, seed, self.class_weights, self.focal_gamma, self.focal_alpha,
                           self.hyperparams, self.normalization, self.n_jobs)


@dataclass
class TrainedModel:
    kind: str
    classes: tuple[int, ...]
    n_features: int
    seed: int
    params: dict[str, np.ndarray] = field(default_factory=dict)
    estimator: Any = None
    normalization: NormalizationRecord | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def class_weights_from_counts(counts: Mapping[int, int]) -> dict[int, float]:
    """``N_total / (K * N_c)`` per class."""
    if not counts:
        raise ConfigError("no classes to weight")
    empty = [c for c, n in counts.items() if n <= 0]
    if empty:
        raise ConfigError(f"classes without pixels cannot be weighted: {empty}")
    total = sum(counts.values())
    k = len(counts)
    return {c: total / (k * n) for c, n in counts.items()}


def class_weights_inverse_frequency(labels: LabelSet) -> dict[int, float]:
    return class_weights_from_counts(labels.pixel_counts())


def sample_weights(y: np.ndarray, cfg: TrainConfig, classes) -> np.ndarray:
    if cfg.class_weights is None:
        return np.ones(len(y))
    if cfg.class_weights == "balanced":
        vals, counts = np.unique(y, return_counts=True)
        table = class_weights_from_counts(dict(zip(vals.tolist(), counts.tolist())))
    else:
        table = dict(cfg.class_weights)
        missing = set(classes) - set(table)
        if missing:
            raise ConfigError(f"class_weights lack classes {sorted(missing)}")
    return np.array([table[int(c)] for c in y], dtype=np.float64)


def sample_alphas(y: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    if isinstance(cfg.focal_alpha, Mapping):
        return np.array([cfg.focal_alpha.get(int(c), 1.0) for c in y], dtype=np.float64)
    return np.full(len(y), float(cfg.focal_alpha))


def _check_inputs(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] == 0:
        raise ContractError(f"features must be (pixels, features>0), got {x.shape}")
    if len(x) != len(y):
        raise ContractError(f"{len(x)} feature rows but {len(y)} labels")
    bad = np.flatnonzero(~np.isfinite(x).all(axis=1))
    if len(bad):
        raise DataError(f"non-finite feature values at pixel rows {bad[:20].tolist()}"
                        + (f" (+{len(bad) - 20} more)" if len(bad) > 20 else ""))
    if len(np.unique(y)) < 2:
        raise DataError("training needs at least two classes")
    return x, y


def train(x, y, cfg: TrainConfig, val: tuple[np.ndarray, np.ndarray] | None = None) -> TrainedModel:
    """Fit one classifier head. Deterministic given (data, cfg, seed)."""
    from . import linear, mlp, trees

    x, y = _check_inputs(x, y)
    classes = tuple(int(c) for c in np.unique(y))
    record = None
    method = cfg.normalization_method
    if method != "none":
        record = fit_normalization(x, method, fitted_on="training_pixels")
        xn = record.apply(x)
        val = None if val is None else (record.apply(val[0]), np.asarray(val[1]))
    else:
        xn = x
    w = sample_weights(y, cfg, classes)
    if cfg.learner == "LR":
        model = linear.fit(xn, y, classes, w, cfg)
    elif cfg.learner == "MLP":
        model = mlp.fit(xn, y, classes, w, cfg, val)
    else:
        model = trees.fit(xn, y, classes, w, cfg)
    model.normalization = record
    model.metadata.update({
        "normalization": method,
        "focal_loss": cfg.learner in FOCAL_LEARNERS,
        "focal_gamma": cfg.focal_gamma if cfg.learner in FOCAL_LEARNERS else None,
        "class_weights": cfg.class_weights if isinstance(cfg.class_weights, (str, type(None)))
        else {int(k): float(v) for k, v in cfg.class_weights.items()},
    })
    return model


def constant_model(class_id: int, n_features: int, seed: int = 0) -> TrainedModel:
    """Degenerate head for single-class training data: probability 1 for that class."""
    return TrainedModel("CONST", (int(class_id),), n_features, seed, metadata={"degenerate": True})


def predict_proba(model: TrainedModel, x) -> np.ndarray:
    from . import linear, mlp, trees

    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ContractError(f"model expects {model.n_features} features, got shape {x.shape}")
    if model.normalization is not None:
        x = model.normalization.apply(x)
    if model.kind == "CONST":
        p = np.ones((len(x), 1))
    elif model.kind == "LR":
        p = linear.predict_proba(model, x)
    elif model.kind == "MLP":
        p = mlp.predict_proba(model, x)
    else:
        p = trees.predict_proba(model, x)
    return p


# --------------------------------------------------------------------------- serialization

MAGIC = b"CMAPMODL"
FORMAT_VERSION = 1


def serialize_model(model: TrainedModel) -> bytes:
    """Binary container: magic, version, JSON header, then raw little-endian arrays and an optional pickle."""
    arrays = []
    payload = io.BytesIO()
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name])
        dtype = arr.dtype.newbyteorder("<").str
        data = arr.astype(dtype).tobytes()
        arrays.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": payload.tell(), "nbytes": len(data)})
        payload.write(data)
    blob = None
    if model.estimator is not None:
        data = pickle.dumps(model.estimator, protocol=4)
        blob = {"offset": payload.tell(), "nbytes": len(data)}
        payload.write(data)
    header = {
        "kind": model.kind,
        "version": FORMAT_VERSION,
        "classes": list(model.classes),
        "n_features": model.n_features,
        "seed": model.seed,
        "normalization": None if model.normalization is None else model.normalization.to_json(),
        "metadata": model.metadata,
        "arrays": arrays,
        "estimator": blob,
    }
    head = json.dumps(header, sort_keys=True, default=_json_default).encode()
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(head)) + head + payload.getvalue()


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (tuple, set)):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def deserialize_model(data: bytes) -> TrainedModel:
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError("not a model container (bad magic)")
    version, hlen = struct.unpack_from("<II", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version}", "version")
    start = len(MAGIC) + 8
    header = json.loads(data[start : start + hlen])
    body = data[start + hlen :]
    params = {}
    for a in header["arrays"]:
        raw = body[a["offset"] : a["offset"] + a["nbytes"]]
        params[a["name"]] = np.frombuffer(raw, dtype=a["dtype"]).reshape(a["shape"]).copy()
    estimator = None
    if header["estimator"]:
        b = header["estimator"]
        estimator = pickle.loads(body[b["offset"] : b["offset"] + b["nbytes"]])
    norm = header["normalization"]
    return TrainedModel(
        header["kind"], tuple(header["classes"]), header["n_features"], header["seed"], params, estimator,
        None if norm is None else NormalizationRecord.from_json(norm), header["metadata"],
    )
