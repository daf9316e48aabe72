"""Declarative run configuration (YAML or JSON) and provenance records."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .evaluation import DEFAULT_FRACTIONS
from .indices import DEFAULT_BAND_MAP, TasseledCapSpec
from .learners.base import DEFAULT_HYPERPARAMS, LEARNERS, TrainConfig
from .rastercube import TASKS
from .stm import DEFAULT_WINDOWS, STATISTICS, SUMMARY_INDICES, StatSpec, WindowSpec

LOGGER = logging.getLogger(__name__)

INPUT_KINDS = ("raw", "stm", "embedding")
YEAR_KEYS = ("cube", "sar", "embeddings", "features", "labels")


@dataclass
class PipelineConfig:
    input: str = "embedding"
    task: str = "landcover"
    years: dict[int, dict[str, str]] = field(default_factory=dict)
    merge: dict[int, int] = field(default_factory=dict)
    windows: list[dict] | None = None
    statistics: list[str] | None = None
    index_summaries: list[list[str]] | None = None
    indices: list[str] | None = None
    band_map: dict[str, str] | None = None
    tasseled_cap: dict[str, list[float]] | None = None
    target_count: int | None = None
    embedding_dim: int | None = None
    learners: list[str] = field(default_factory=lambda: list(LEARNERS))
    hyperparams: dict[str, dict[str, Any]] = field(default_factory=dict)
    heads: list[str] | None = None
    focal_gamma: float = 2.0
    class_weights: Any = "balanced"
    selection_runs: int = 200
    selection_year: int | None = None
    n_runs: int = 20
    transfer_runs: int = 5
    map_runs: int = 3
    fractions: list[float] = field(default_factory=lambda: list(DEFAULT_FRACTIONS))
    seed: int = 0
    n_workers: int = 1
    cropland_class: int = 1
    core_mask: str | None = None
    report: list[str] = field(default_factory=lambda: ["evaluation", "transfer", "change"])
    cpu: list[dict] = field(default_factory=list)
    cpu_runs: int = 5
    synth: dict[str, Any] = field(default_factory=dict)
    output: str = "out"
    source: str | None = None

    def __post_init__(self):
        if self.input not in INPUT_KINDS:
            raise ConfigError(f"input must be one of {INPUT_KINDS}, got {self.input!r}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        self.years = {int(y): dict(v or {}) for y, v in (self.years or {}).items()}
        for y, entry in self.years.items():
            unknown = set(entry) - set(YEAR_KEYS)
            if unknown:
                raise ConfigError(f"year {y}: unknown keys {sorted(unknown)}")
        self.merge = {int(k): int(v) for k, v in (self.merge or {}).items()}
        bad = [l for l in self.learners if l not in LEARNERS]
        if bad:
            raise ConfigError(f"unknown learners {bad}")
        for l, hp in self.hyperparams.items():
            if l not in DEFAULT_HYPERPARAMS:
                raise ConfigError(f"hyperparameters given for unknown learner {l!r}")
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an explicit integer")
        for name in ("n_runs", "transfer_runs", "map_runs", "cpu_runs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.selection_runs < 2:
            raise ConfigError(f"selection_runs must be >= 2, got {self.selection_runs}")

    # ------------------------------------------------------------------ derived specs

    def window_specs(self) -> tuple[WindowSpec, ...]:
        if self.windows is None:
            return DEFAULT_WINDOWS
        out = []
        for w in self.windows:
            try:
                start = tuple(int(p) for p in str(w["start"]).split("-"))
                end = tuple(int(p) for p in str(w["end"]).split("-"))
                out.append(WindowSpec(w["name"], start, end, bool(w.get("wraps_year", start > end))))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"bad window entry {w!r}: {exc}") from None
        return tuple(out)

    def stat_spec(self) -> StatSpec:
        stats = tuple(self.statistics) if self.statistics is not None else STATISTICS
        if self.index_summaries is not None:
            summaries = tuple(tuple(s) for s in self.index_summaries)
        else:
            summaries = tuple((i, "median") for i in SUMMARY_INDICES
                              if self.tasseled_cap is not None or i not in ("TCW", "TCG", "TCB"))
        return StatSpec(stats, summaries)

    def tc_spec(self) -> TasseledCapSpec | None:
        return None if self.tasseled_cap is None else TasseledCapSpec(self.tasseled_cap)

    def bands(self) -> dict[str, str]:
        return dict(DEFAULT_BAND_MAP if self.band_map is None else self.band_map)

    def head_configs(self, names) -> list[TrainConfig]:
        return [
            TrainConfig(n, self.seed, self.class_weights, self.focal_gamma,
                        hyperparams=self.hyperparams.get(n, {}))
            for n in names
        ]

    def path(self, year: int, key: str) -> Path | None:
        entry = self.years.get(year, {})
        return None if key not in entry else self.resolve(entry[key])

    def resolve(self, p: str | Path) -> Path:
        p = Path(p)
        if not p.is_absolute() and self.source is not None:
            p = Path(self.source).parent / p
        return p

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.output)

    def to_json(self) -> dict:
        data = asdict(self)
        data["years"] = {str(k): v for k, v in self.years.items()}
        data["merge"] = {str(k): v for k, v in self.merge.items()}
        return data


def load_config(path: str | Path, output: str | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: config must be a mapping")
    known = set(PipelineConfig.__dataclass_fields__) - {"source"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    data = dict(data)
    if output is not None:
        data["output"] = str(Path(output).resolve())
    try:
        return PipelineConfig(**data, source=str(path.resolve()))
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def hash_inputs(paths) -> dict[str, str]:
    """SHA-256 per input file; directories are hashed file by file in sorted order."""
    out: dict[str, str] = {}
    for p in paths:
        p = Path(p)
        files = sorted(f for f in p.rglob("*") if f.is_file()) if p.is_dir() else [p]
        h = hashlib.sha256()
        for f in files:
            h.update(str(f.relative_to(p) if p.is_dir() else f.name).encode())
            with open(f, "rb") as fh:
                for chunk in iter(lambda: fh.read(1 << 20), b""):
                    h.update(chunk)
        out[str(p)] = h.hexdigest()
    return out


def write_provenance(directory: Path, cfg: PipelineConfig, inputs) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.resolved.json").write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n")
    (directory / "inputs.sha256.json").write_text(json.dumps(hash_inputs(inputs), indent=2, sort_keys=True) + "\n")
