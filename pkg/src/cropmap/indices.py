"""Per-date vegetation/water indices and tasseled-cap projections."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .rastercube import FeatureRaster, TimeSeriesCube

S2_BANDS = (
    "S2_B02", "S2_B03", "S2_B04", "S2_B05", "S2_B06",
    "S2_B07", "S2_B08", "S2_B8A", "S2_B11", "S2_B12",
)
S1_BANDS = ("S1_VV", "S1_VH")

DEFAULT_BAND_MAP = {
    "blue": "S2_B02",
    "green": "S2_B03",
    "red": "S2_B04",
    "nir": "S2_B08",
    "swir1": "S2_B11",
    "vv": "S1_VV",
    "vh": "S1_VH",
}

INDEX_ROLES = {
    "NDVI": ("nir", "red"),
    "GCVI": ("nir", "green"),
    "EVI": ("nir", "red", "blue"),
    "LSWI": ("nir", "swir1"),
    "NDWI": ("green", "nir"),
    "RVI": ("vv", "vh"),
}
TC_COMPONENTS = ("TCW", "TCG", "TCB")


@dataclass(frozen=True)
class IndexSpec:
    name: str
    band_map: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_BAND_MAP))

    def __post_init__(self):
        if self.name not in INDEX_ROLES:
            raise ConfigError(f"unknown index {self.name!r}; choose from {sorted(INDEX_ROLES)}")
        missing = [r for r in INDEX_ROLES[self.name] if r not in self.band_map]
        if missing:
            raise ConfigError(f"{self.name}: band_map lacks role(s) {missing}")

    @property
    def roles(self) -> tuple[str, ...]:
        return INDEX_ROLES[self.name]

    def bands(self) -> tuple[str, ...]:
        return tuple(self.band_map[r] for r in self.roles)


@dataclass(frozen=True)
class TasseledCapSpec:
    """Linear projection weights per component, aligned with ``bands``."""

    coefficients: Mapping[str, Sequence[float]]
    bands: tuple[str, ...] = S2_BANDS

    def __post_init__(self):
        object.__setattr__(self, "bands", tuple(self.bands))
        for comp in TC_COMPONENTS:
            if comp not in self.coefficients:
                raise ConfigError(f"tasseled cap component {comp} missing")
            if len(self.coefficients[comp]) != len(self.bands):
                raise ConfigError(
                    f"{comp}: {len(self.coefficients[comp])} coefficients for {len(self.bands)} bands"
                )

    def matrix(self) -> np.ndarray:
        return np.array([self.coefficients[c] for c in TC_COMPONENTS], dtype=np.float64)


def index_formula(name: str, b: Mapping[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate one index from role arrays. Returns ``(value, denominator_ok)``.

    Zero-denominator cells get value 0 and ``denominator_ok`` False.
    """
    if name == "NDVI":
        num, den = b["nir"] - b["red"], b["nir"] + b["red"]
    elif name == "GCVI":
        num, den = b["nir"], b["green"]
    elif name == "EVI":
        num = 2.5 * (b["nir"] - b["red"])
        den = b["nir"] + 6.0 * b["red"] - 7.5 * b["blue"] + 1.0
    elif name == "LSWI":
        num, den = b["nir"] - b["swir1"], b["nir"] + b["swir1"]
    elif name == "NDWI":
        num, den = b["green"] - b["nir"], b["green"] + b["nir"]
    elif name == "RVI":
        num, den = 4.0 * b["vh"], b["vv"] + b["vh"]
    else:
        raise ConfigError(f"unknown index {name!r}")
    ok = den != 0
    safe = np.where(ok, den, 1.0)
    value = np.where(ok, num / safe, 0.0)
    if name == "GCVI":
        value = np.where(ok, value - 1.0, 0.0)
    return value, ok


def index_planes(values: np.ndarray, valid: np.ndarray, bands: Sequence[str], spec: IndexSpec) -> tuple[np.ndarray, np.ndarray]:
    """Index over a ``(date, band, ...)`` block; returns float64 values and validity."""
    roles = {}
    for role, band in zip(spec.roles, spec.bands()):
        if band not in bands:
            raise ConfigError(f"{spec.name}: role {role!r} maps to band {band!r} which the cube lacks")
        roles[role] = values[:, list(bands).index(band)].astype(np.float64)
    value, ok = index_formula(spec.name, roles)
    ok = ok & valid
    return np.where(ok, value, 0.0), ok


def tasseled_cap_planes(values: np.ndarray, valid: np.ndarray, bands: Sequence[str], spec: TasseledCapSpec) -> np.ndarray:
    """TC components over a ``(date, band, ...)`` block -> ``(component, date, ...)``."""
    missing = [b for b in spec.bands if b not in bands]
    if missing:
        raise ConfigError(f"tasseled cap bands {missing} not in cube")
    idx = [list(bands).index(b) for b in spec.bands]
    stack = values[:, idx].astype(np.float64)
    out = np.tensordot(spec.matrix(), stack, axes=([1], [1]))
    return np.where(valid[None], out, 0.0)


def _per_date_raster(name: str, cube: TimeSeriesCube, planes: np.ndarray, ok: np.ndarray, **meta) -> FeatureRaster:
    m = cube.manifest
    names = [f"{name}_{d.isoformat()}" for d in m.dates]
    return FeatureRaster(
        m.width, m.height, names, planes.astype(np.float32), "raw", m.year,
        valid=ok, metadata={"index": name, **meta},
    )


def compute_index(cube: TimeSeriesCube, spec: IndexSpec) -> FeatureRaster:
    """One feature per date; the validity mask carries cloud masking and zero denominators."""
    planes, ok = index_planes(cube.values, cube.valid, cube.bands, spec)
    meta = {"band_map": {r: spec.band_map[r] for r in spec.roles}}
    if spec.name == "RVI":
        meta["backscatter_scale"] = "linear_power"
    return _per_date_raster(spec.name, cube, planes, ok, **meta)


def compute_tasseled_cap(cube: TimeSeriesCube, spec: TasseledCapSpec) -> dict[str, FeatureRaster]:
    planes = tasseled_cap_planes(cube.values, cube.valid, cube.bands, spec)
    return {
        comp: _per_date_raster(comp, cube, planes[i], cube.valid)
        for i, comp in enumerate(TC_COMPONENTS)
    }
