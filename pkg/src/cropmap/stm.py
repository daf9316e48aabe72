"""Spectral-temporal metrics and gap-filled raw time-series features.

Window statistics are computed on the sorted valid values of each pixel, with
every sum accumulated sequentially over dates. That makes each statistic
exactly invariant to the order of observations and to the tiling of the scene.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .indices import (
    DEFAULT_BAND_MAP,
    IndexSpec,
    TasseledCapSpec,
    TC_COMPONENTS,
    index_planes,
    tasseled_cap_planes,
)
from .rastercube import FeatureRaster, TimeSeriesCube
from .tiling import DEFAULT_TILE_ROWS, map_tiles

LOGGER = logging.getLogger(__name__)

STATISTICS = ("min", "q25", "q50", "q75", "max", "mean", "std", "range", "iqr", "skewness", "kurtosis")
MIN_SAMPLES = {s: 1 for s in STATISTICS} | {"skewness": 3, "kurtosis": 3}
SUMMARY_INDICES = ("NDVI", "EVI", "NDWI", "TCW", "TCG", "TCB")
REDUCTIONS = ("mean", "median")


@dataclass(frozen=True)
class WindowSpec:
    """Calendar window from ``start`` to ``end`` inclusive, as (month, day) pairs."""

    name: str
    start: tuple[int, int]
    end: tuple[int, int]
    wraps_year: bool = False

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "end", tuple(self.end))
        for md in (self.start, self.end):
            try:
                date(2001, *md)
            except (TypeError, ValueError):
                raise ConfigError(f"window {self.name!r}: invalid month-day {md}") from None
        if not self.wraps_year and self.start > self.end:
            raise ConfigError(f"window {self.name!r}: start after end without wraps_year")

    def contains(self, d: date) -> bool:
        md = (d.month, d.day)
        if self.wraps_year:
            return md >= self.start or md <= self.end
        return self.start <= md <= self.end

    def mask(self, dates: Sequence[date]) -> np.ndarray:
        return np.array([self.contains(d) for d in dates], dtype=bool)


DEFAULT_WINDOWS = (
    WindowSpec("all", (1, 1), (12, 31)),
    WindowSpec("early", (7, 1), (8, 15)),
    WindowSpec("peak", (8, 16), (10, 15)),
    WindowSpec("late", (10, 16), (11, 30)),
    WindowSpec("season", (7, 1), (11, 30)),
    WindowSpec("off", (12, 1), (6, 30), wraps_year=True),
)


@dataclass(frozen=True)
class StatSpec:
    statistics: tuple[str, ...] = STATISTICS
    index_summaries: tuple[tuple[str, str], ...] = tuple((i, "median") for i in SUMMARY_INDICES)

    def __post_init__(self):
        object.__setattr__(self, "statistics", tuple(self.statistics))
        object.__setattr__(self, "index_summaries", tuple(tuple(s) for s in self.index_summaries))
        if not self.statistics and not self.index_summaries:
            raise ConfigError("StatSpec must request at least one statistic or index summary")
        for s in self.statistics:
            if s not in STATISTICS:
                raise ConfigError(f"unknown statistic {s!r}")
        for idx, red in self.index_summaries:
            if idx not in SUMMARY_INDICES:
                raise ConfigError(f"unknown summary index {idx!r}")
            if red not in REDUCTIONS:
                raise ConfigError(f"unknown reduction {red!r} for {idx}")


# --------------------------------------------------------------------------- kernel


def _seq_sum(a: np.ndarray) -> np.ndarray:
    acc = np.zeros(a.shape[1:], dtype=np.float64)
    for row in a:
        acc += row
    return acc


def _quantile(s: np.ndarray, n: np.ndarray, p: float) -> np.ndarray:
    """Type-7 quantile of sorted columns ``s`` with ``n`` leading valid rows."""
    h = (np.maximum(n, 1) - 1) * p
    lo = np.floor(h).astype(np.int64)
    hi = np.minimum(lo + 1, np.maximum(n, 1) - 1)
    frac = h - lo
    a = np.take_along_axis(s, lo[None], axis=0)[0]
    b = np.take_along_axis(s, hi[None], axis=0)[0]
    return a + frac * (b - a)


def window_statistics(x: np.ndarray, statistics: Iterable[str]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Statistics over axis 0 of ``x`` (NaN = missing) -> {stat: (value, ok)}.

    Values failing their minimum sample count (or zero variance for the
    third/fourth moments) are 0 with ``ok`` False.
    """
    statistics = list(statistics)
    for s in statistics:
        if s not in STATISTICS:
            raise ConfigError(f"unknown statistic {s!r}")
    x = np.asarray(x, dtype=np.float64)
    cols = x.shape[1:]
    if x.shape[0] == 0:
        zero = np.zeros(cols)
        return {s: (zero.copy(), np.zeros(cols, dtype=bool)) for s in statistics}
    s = np.sort(x, axis=0)
    present = ~np.isnan(s)
    n = present.sum(axis=0)
    z = np.where(present, s, 0.0)
    lo = s[0]
    hi = np.take_along_axis(s, (np.maximum(n, 1) - 1)[None], axis=0)[0]
    flat = hi == lo
    out: dict[str, np.ndarray] = {}
    need = set(statistics)
    if need & {"q25", "iqr"}:
        out["q25"] = _quantile(s, n, 0.25)
    if "q50" in need:
        out["q50"] = _quantile(s, n, 0.5)
    if need & {"q75", "iqr"}:
        out["q75"] = _quantile(s, n, 0.75)
    out["min"], out["max"] = lo, hi
    out["range"] = hi - lo
    if "iqr" in need:
        out["iqr"] = out["q75"] - out["q25"]
    if need & {"mean", "std", "skewness", "kurtosis"}:
        safe_n = np.maximum(n, 1)
        mean = np.where(flat, lo, _seq_sum(z) / safe_n)
        out["mean"] = mean
        d = np.where(present, s - mean, 0.0)
        d2 = d * d
        m2 = _seq_sum(d2) / safe_n
        out["std"] = np.sqrt(m2)
        if need & {"skewness", "kurtosis"}:
            m3 = _seq_sum(d2 * d) / safe_n
            m4 = _seq_sum(d2 * d2) / safe_n
            pos = m2 > 0
            m2s = np.where(pos, m2, 1.0)
            out["skewness"] = np.where(pos, m3 / m2s**1.5, 0.0)
            out["kurtosis"] = np.where(pos, m4 / (m2s * m2s) - 3.0, 0.0)
    result = {}
    for stat in statistics:
        ok = n >= MIN_SAMPLES[stat]
        if stat in ("skewness", "kurtosis"):
            ok = ok & ~flat
        result[stat] = (np.where(ok, out[stat], 0.0), ok)
    return result


def reduce_window(series: Sequence[tuple[date, float, bool]], window: WindowSpec, stat: str) -> tuple[float, bool]:
    """One statistic over the valid observations of ``series`` inside ``window``."""
    if stat not in STATISTICS:
        raise ConfigError(f"unknown statistic {stat!r}")
    dates = [d for d, _, _ in series]
    if any(b < a for a, b in zip(dates, dates[1:])):
        raise ContractError("series dates must be sorted ascending")
    vals = [v for d, v, ok in series if ok and window.contains(d)]
    x = np.array(vals, dtype=np.float64).reshape(-1, 1)
    value, ok = window_statistics(x, [stat])[stat]
    return float(value[0]), bool(ok[0])


# --------------------------------------------------------------------------- gap filling


def fill_gaps(x: np.ndarray, ok: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linear temporal interpolation of invalid entries along axis 0.

    Edges take the nearest valid value. Returns ``(filled, imputed, series_ok)``
    where ``series_ok`` is False for columns with no valid entry at all.
    """
    x = np.asarray(x, dtype=np.float64)
    ok = np.asarray(ok, dtype=bool)
    T = x.shape[0]
    idx = np.arange(T).reshape((T,) + (1,) * (x.ndim - 1))
    prev = np.maximum.accumulate(np.where(ok, idx, -1), axis=0)
    nxt = np.flip(np.minimum.accumulate(np.flip(np.where(ok, idx, T), axis=0), axis=0), axis=0)
    has_prev, has_next = prev >= 0, nxt < T
    p = np.clip(prev, 0, T - 1)
    q = np.clip(nxt, 0, T - 1)
    xp = np.take_along_axis(x, p, axis=0)
    xq = np.take_along_axis(x, q, axis=0)
    tt = np.asarray(t, dtype=np.float64).reshape(idx.shape)
    tp = np.take_along_axis(np.broadcast_to(tt, x.shape), p, axis=0)
    tq = np.take_along_axis(np.broadcast_to(tt, x.shape), q, axis=0)
    span = np.where(tq > tp, tq - tp, 1.0)
    interp = xp + (xq - xp) * (tt - tp) / span
    filled = np.where(has_prev & has_next, interp, np.where(has_prev, xp, xq))
    filled = np.where(ok, x, filled)
    series_ok = ok.any(axis=0)
    filled = np.where(series_ok[None], filled, 0.0)
    return filled, ~ok & series_ok[None], series_ok


def _ordinals(dates: Sequence[date]) -> np.ndarray:
    return np.array([d.toordinal() for d in dates], dtype=np.float64)


# --------------------------------------------------------------------------- feature layouts


def stm_feature_names(bands: Sequence[str], windows: Sequence[WindowSpec], stats: StatSpec,
                      sar_dates: Sequence[date] = (), sar_bands: Sequence[str] = ()) -> list[str]:
    names = []
    for w in windows:
        names += [f"{w.name}_{b}_{s}" for b in bands for s in stats.statistics]
        names += [f"{w.name}_{i}_{r}" for i, r in stats.index_summaries]
    for b in list(sar_bands) + (["RVI"] if sar_bands else []):
        names += [f"{b}_{d.isoformat()}" for d in sar_dates]
    return names


def stm_feature_count(n_bands: int, n_windows: int, stats: StatSpec, n_sar_dates: int = 0, n_sar_bands: int = 2) -> int:
    """windows x (bands x statistics + index summaries) + SAR dates x (SAR bands + RVI)."""
    sar = n_sar_dates * (n_sar_bands + 1) if n_sar_dates else 0
    return n_windows * (n_bands * len(stats.statistics) + len(stats.index_summaries)) + sar


def _check_target(names: list[str], closed_form: int, target: int | None) -> dict:
    meta = {"feature_count": len(names), "closed_form_count": closed_form}
    if len(names) != closed_form:
        raise ContractError(f"feature layout produced {len(names)} names, closed form says {closed_form}")
    if target is not None:
        meta["target_feature_count"] = int(target)
        meta["target_mismatch"] = len(names) != int(target)
        if meta["target_mismatch"]:
            LOGGER.warning("feature count %d differs from configured target %d", len(names), target)
    return meta


def _check_year(cube: TimeSeriesCube) -> None:
    off = [d for d in cube.dates if d.year != cube.year]
    if off:
        raise ConfigError(f"cube for {cube.year} has dates from other years: {off[:3]}")


def _sar_block(sar: TimeSeriesCube, r0: int, r1: int, rvi: IndexSpec):
    vals = sar.values[:, :, r0:r1]
    valid = sar.valid[:, r0:r1]
    t = _ordinals(sar.dates)
    feats, imps, oks = [], [], []
    for b in range(len(sar.bands)):
        f, imp, ok = fill_gaps(vals[:, b], valid, t)
        feats.append(f), imps.append(imp), oks.append(np.broadcast_to(ok, f.shape))
    r, rok = index_planes(vals, valid, sar.bands, rvi)
    f, imp, ok = fill_gaps(r, rok, t)
    feats.append(f), imps.append(imp), oks.append(np.broadcast_to(ok, f.shape))
    return np.concatenate(feats), np.concatenate(imps), np.concatenate(oks)


def build_stm_features(
    cube: TimeSeriesCube,
    windows: Sequence[WindowSpec] = DEFAULT_WINDOWS,
    stats: StatSpec = StatSpec(),
    tc: TasseledCapSpec | None = None,
    sar_cube: TimeSeriesCube | None = None,
    band_map: dict | None = None,
    target_count: int | None = None,
    n_workers: int | None = 1,
    tile_rows: int = DEFAULT_TILE_ROWS,
) -> FeatureRaster:
    """Window statistics of every optical band plus index summaries, then the SAR series.

    Feature names follow ``<window>_<band-or-index>_<stat>``; SAR features are
    ``<band>_<date>`` (VV, VH, then RVI), gap-filled like raw features.
    """
    _check_year(cube)
    band_map = dict(DEFAULT_BAND_MAP if band_map is None else band_map)
    if any(i in TC_COMPONENTS for i, _ in stats.index_summaries) and tc is None:
        raise ConfigError("tasseled-cap summaries requested without a TasseledCapSpec")
    if sar_cube is not None:
        _check_year(sar_cube)
        if (sar_cube.manifest.width, sar_cube.manifest.height) != (cube.manifest.width, cube.manifest.height):
            raise ContractError("SAR cube grid differs from optical cube grid")
    m = cube.manifest
    sar_bands = sar_cube.bands if sar_cube is not None else ()
    sar_dates = sar_cube.dates if sar_cube is not None else ()
    names = stm_feature_names(m.bands, windows, stats, sar_dates, sar_bands)
    meta = _check_target(names, stm_feature_count(len(m.bands), len(windows), stats, len(sar_dates), len(sar_bands)), target_count)
    masks = [w.mask(m.dates) for w in windows]
    empty = [w.name for w, mk in zip(windows, masks) if not (cube.valid[mk].any() if mk.any() else False)]
    for name in empty:
        LOGGER.warning("window %r has no valid observation anywhere in the scene; its features are invalid", name)
    specs = {i: IndexSpec(i, band_map) for i, _ in stats.index_summaries if i not in TC_COMPONENTS}
    rvi = IndexSpec("RVI", band_map)

    def tile(r0: int, r1: int):
        vals = cube.values[:, :, r0:r1]
        valid = cube.valid[:, r0:r1]
        idx_planes = {}
        for i, spec in specs.items():
            v, ok = index_planes(vals, valid, m.bands, spec)
            idx_planes[i] = np.where(ok, v, np.nan)
        if tc is not None and any(i in TC_COMPONENTS for i, _ in stats.index_summaries):
            tcp = tasseled_cap_planes(vals, valid, m.bands, tc)
            for k, comp in enumerate(TC_COMPONENTS):
                idx_planes[comp] = np.where(valid, tcp[k], np.nan)
        feats, oks = [], []
        for w, mk in zip(windows, masks):
            wv = valid[mk]
            for b in range(len(m.bands)):
                x = np.where(wv, vals[mk, b], np.nan)
                res = window_statistics(x, stats.statistics)
                for s in stats.statistics:
                    feats.append(res[s][0]), oks.append(res[s][1])
            for i, red in stats.index_summaries:
                stat = "mean" if red == "mean" else "q50"
                v, ok = window_statistics(idx_planes[i][mk], [stat])[stat]
                feats.append(v), oks.append(ok)
        f = np.stack(feats) if feats else np.zeros((0, r1 - r0, m.width))
        ok = np.stack(oks) if oks else np.zeros((0, r1 - r0, m.width), dtype=bool)
        imp = np.zeros(f.shape, dtype=bool)
        if sar_cube is not None:
            sf, si, so = _sar_block(sar_cube, r0, r1, rvi)
            f, imp, ok = np.concatenate([f, sf]), np.concatenate([imp, si]), np.concatenate([ok, so])
        return f.astype(np.float32), ok, imp

    parts = map_tiles(tile, m.height, n_workers, tile_rows)
    values = np.concatenate([p[0] for p in parts], axis=1)
    valid = np.concatenate([p[1] for p in parts], axis=1)
    imputed = np.concatenate([p[2] for p in parts], axis=1)
    meta.update({
        "windows": [w.name for w in windows],
        "statistics": list(stats.statistics),
        "index_summaries": [f"{i}:{r}" for i, r in stats.index_summaries],
        "empty_windows": empty,
        "quantile_method": "linear (type 7)",
        "moments": "population",
        "rvi_scale": "linear_power",
    })
    return FeatureRaster(m.width, m.height, names, values, "stm", m.year, valid, imputed, meta)


def raw_feature_count(n_dates: int, n_bands: int, n_indices: int, n_sar_dates: int = 0, n_sar_bands: int = 0, n_sar_indices: int = 0) -> int:
    return n_dates * (n_bands + n_indices) + n_sar_dates * (n_sar_bands + n_sar_indices)


DEFAULT_RAW_INDICES = ("NDVI", "GCVI", "EVI", "LSWI", "RVI")


def build_raw_features(
    cube: TimeSeriesCube,
    sar_cube: TimeSeriesCube | None = None,
    indices: Sequence[IndexSpec] | None = None,
    target_count: int | None = None,
    n_workers: int | None = 1,
    tile_rows: int = DEFAULT_TILE_ROWS,
) -> FeatureRaster:
    """Per-date band values, per-date indices and per-date SAR values, gap-filled in time.

    Order: optical bands (band-major over dates), optical indices, SAR bands,
    SAR indices. An index is computed on whichever cube carries its bands.
    """
    if indices is None:
        indices = [IndexSpec(n) for n in DEFAULT_RAW_INDICES]
    m = cube.manifest
    opt_idx = [s for s in indices if all(b in m.bands for b in s.bands())]
    sar_idx = [s for s in indices if s not in opt_idx]
    if sar_idx and (sar_cube is None or not all(b in sar_cube.bands for s in sar_idx for b in s.bands())):
        missing = [s.name for s in sar_idx]
        raise ConfigError(f"indices {missing} need bands absent from the supplied cubes")
    if sar_cube is not None and (sar_cube.manifest.width, sar_cube.manifest.height) != (m.width, m.height):
        raise ContractError("SAR cube grid differs from optical cube grid")

    def series_names(c: TimeSeriesCube, idx):
        out = [f"{b}_{d.isoformat()}" for b in c.bands for d in c.dates]
        return out + [f"{s.name}_{d.isoformat()}" for s in idx for d in c.dates]

    names = series_names(cube, opt_idx)
    if sar_cube is not None:
        names += series_names(sar_cube, sar_idx)
    closed = raw_feature_count(
        len(m.dates), len(m.bands), len(opt_idx),
        len(sar_cube.dates) if sar_cube else 0, len(sar_cube.bands) if sar_cube else 0, len(sar_idx),
    )
    meta = _check_target(names, closed, target_count)

    def block(c: TimeSeriesCube, idx, r0, r1):
        vals = c.values[:, :, r0:r1]
        valid = c.valid[:, r0:r1]
        t = _ordinals(c.dates)
        feats, imps, oks = [], [], []
        planes = [(vals[:, b], valid) for b in range(len(c.bands))]
        planes += [index_planes(vals, valid, c.bands, s) for s in idx]
        for x, ok in planes:
            f, imp, sok = fill_gaps(x, ok, t)
            feats.append(f), imps.append(imp), oks.append(np.broadcast_to(sok, f.shape))
        return np.concatenate(feats), np.concatenate(imps), np.concatenate(oks)

    def tile(r0, r1):
        f, imp, ok = block(cube, opt_idx, r0, r1)
        if sar_cube is not None:
            sf, si, so = block(sar_cube, sar_idx, r0, r1)
            f, imp, ok = np.concatenate([f, sf]), np.concatenate([imp, si]), np.concatenate([ok, so])
        return f.astype(np.float32), ok, imp

    parts = map_tiles(tile, m.height, n_workers, tile_rows)
    values = np.concatenate([p[0] for p in parts], axis=1)
    valid = np.concatenate([p[1] for p in parts], axis=1)
    imputed = np.concatenate([p[2] for p in parts], axis=1)
    meta["gap_filling"] = "linear temporal interpolation, nearest valid at edges"
    return FeatureRaster(m.width, m.height, names, values, "raw", m.year, valid, imputed, meta)
