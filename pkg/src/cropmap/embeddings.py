"""Precomputed annual embedding rasters and per-feature normalization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError, ContractError, FormatError
from .rastercube import FeatureRaster, read_feature_raster, write_feature_raster

LOGGER = logging.getLogger(__name__)

NORMALIZATION_METHODS = ("zscore", "minmax", "none")


@dataclass(frozen=True)
class EmbeddingRaster(FeatureRaster):
    provider: str = ""

    def __post_init__(self):
        super().__post_init__()
        if self.source != "embedding":
            raise ContractError(f"embedding raster must have source 'embedding', got {self.source!r}")
        if not self.provider:
            raise ContractError("embedding provider must be non-empty")

    @property
    def dimension(self) -> int:
        return self.n_features

    @classmethod
    def from_matrix(cls, values: np.ndarray, provider: str, year: int, prefix: str = "emb") -> "EmbeddingRaster":
        """Build from a ``(dim, height, width)`` array with names ``<prefix>_000`` ..."""
        d, h, w = values.shape
        names = [f"{prefix}_{i:03d}" for i in range(d)]
        return cls(w, h, names, values, "embedding", year, metadata={"provider": provider}, provider=provider)


def write_embeddings(er: EmbeddingRaster, path: str | Path) -> Path:
    meta = dict(er.metadata)
    meta["provider"] = er.provider
    fr = FeatureRaster(er.width, er.height, er.feature_names, er.values, "embedding", er.year,
                       er.valid, er.imputed, meta)
    return write_feature_raster(fr, path)


def ingest_embeddings(path: str | Path, expected_dim: int) -> EmbeddingRaster:
    fr = read_feature_raster(path)
    if fr.source != "embedding":
        raise FormatError(f"{path}: source is {fr.source!r}, not 'embedding'", "source")
    if fr.n_features != expected_dim:
        raise FormatError(
            f"{path}: embedding dimension {fr.n_features}, expected {expected_dim}", "feature_names"
        )
    provider = fr.metadata.get("provider")
    if not provider:
        raise FormatError(f"{path}: embedding provider not recorded", "metadata.provider")
    return EmbeddingRaster(fr.width, fr.height, fr.feature_names, fr.values, "embedding", fr.year,
                           fr.valid, fr.imputed, fr.metadata, provider=provider)


@dataclass(frozen=True)
class NormalizationRecord:
    """Per-feature affine transform ``(x - offset) / scale`` plus where it was fitted."""

    method: str
    feature_names: tuple[str, ...]
    offset: np.ndarray
    scale: np.ndarray
    fitted_year: int | None = None
    fitted_on: str = "whole_raster"
    n_pixels: int = 0
    zero_variance: tuple[str, ...] = ()

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Transform an ``(n, features)`` matrix."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != len(self.offset):
            raise ContractError(f"matrix has {x.shape[-1]} features, record has {len(self.offset)}")
        return (x - self.offset) / self.scale

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.scale + self.offset

    def apply_raster(self, fr: FeatureRaster) -> FeatureRaster:
        if tuple(fr.feature_names) != self.feature_names:
            raise ContractError("feature names differ from the normalization record")
        z = (fr.values.astype(np.float64) - self.offset[:, None, None]) / self.scale[:, None, None]
        meta = dict(fr.metadata)
        meta["normalization"] = {
            "method": self.method,
            "fitted_year": self.fitted_year,
            "fitted_on": self.fitted_on,
            "applied_year": fr.year,
        }
        return FeatureRaster(fr.width, fr.height, fr.feature_names, z, fr.source, fr.year,
                             fr.valid, fr.imputed, meta)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "feature_names": list(self.feature_names),
            "offset": self.offset.tolist(),
            "scale": self.scale.tolist(),
            "fitted_year": self.fitted_year,
            "fitted_on": self.fitted_on,
            "n_pixels": self.n_pixels,
            "zero_variance": list(self.zero_variance),
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "NormalizationRecord":
        return cls(
            data["method"], tuple(data["feature_names"]),
            np.asarray(data["offset"], dtype=np.float64), np.asarray(data["scale"], dtype=np.float64),
            data.get("fitted_year"), data.get("fitted_on", "whole_raster"), data.get("n_pixels", 0),
            tuple(data.get("zero_variance", ())),
        )


def fit_normalization(x: np.ndarray, method: str, feature_names=None, fitted_year: int | None = None,
                      fitted_on: str = "labeled_pixels") -> NormalizationRecord:
    """Fit per-feature offset/scale on the rows of ``x``."""
    if method not in NORMALIZATION_METHODS:
        raise ConfigError(f"unknown normalization {method!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError("normalization needs a non-empty (pixels, features) matrix")
    d = x.shape[1]
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{i}" for i in range(d))
    zero = ()
    if method == "none":
        offset, scale = np.zeros(d), np.ones(d)
    elif method == "zscore":
        offset = x.mean(axis=0)
        scale = x.std(axis=0)
    else:
        offset = x.min(axis=0)
        scale = x.max(axis=0) - offset
    if method != "none":
        flat = ~(scale > 0)
        if flat.any():
            zero = tuple(names[i] for i in np.flatnonzero(flat))
            LOGGER.warning("%d zero-variance feature(s) get scale 1: %s", len(zero), list(zero[:5]))
            scale = np.where(flat, 1.0, scale)
    return NormalizationRecord(method, names, offset, scale, fitted_year, fitted_on, x.shape[0], zero)


def normalize_features(fr: FeatureRaster, method: str = "zscore", stats_from: np.ndarray | None = None
                       ) -> tuple[FeatureRaster, NormalizationRecord]:
    """Normalize a raster with statistics from the pixels in ``stats_from`` (a (row, col) mask).

    ``None`` fits on every pixel whose features are all valid.
    """
    mask = fr.pixel_valid() if stats_from is None else np.asarray(stats_from, dtype=bool)
    if mask.shape != (fr.height, fr.width):
        raise ContractError("stats_from mask does not match the raster grid")
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        raise ContractError("no pixels selected for fitting the normalization")
    record = fit_normalization(
        fr.matrix(rows, cols), method, fr.feature_names, fr.year,
        "whole_raster" if stats_from is None else "labeled_pixels",
    )
    return record.apply_raster(fr), record
