"""Raster data model and directory-based file I/O.

Every on-disk type is a directory holding a small JSON manifest plus flat
little-endian payloads, so a cube written here can be read back bit-exactly.

Pixel geometry convention: a vertex ``(x, y)`` is ``(column, row)`` in pixel
units, and pixel ``(row, col)`` has its center at ``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ContractError, FormatError, GeometryError, SizeError

LOGGER = logging.getLogger(__name__)

NODATA = -1
NODATA_POLICIES = ("masked", "sentinel_value")
FEATURE_SOURCES = ("raw", "stm", "embedding")
TASKS = ("landcover", "croptype")

CUBE_MANIFEST = "manifest.json"
CUBE_KEYS = ("width", "height", "dates", "bands", "pixel_size_m", "year")


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class CubeManifest:
    width: int
    height: int
    dates: tuple[date, ...]
    bands: tuple[str, ...]
    pixel_size_m: float = 10.0
    year: int = 2018
    nodata_policy: str = "masked"

    def __post_init__(self):
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "bands", tuple(self.bands))
        if self.width < 1 or self.height < 1:
            raise FormatError("grid must be at least 1x1", "width" if self.width < 1 else "height")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise FormatError("dates must be strictly increasing", "dates")
        if not self.bands or len(set(self.bands)) != len(self.bands):
            raise FormatError("bands must be non-empty and unique", "bands")
        if self.nodata_policy not in NODATA_POLICIES:
            raise FormatError(f"unknown nodata policy {self.nodata_policy!r}", "nodata_policy")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (len(self.dates), len(self.bands), self.height, self.width)

    def band_index(self, band: str) -> int:
        try:
            return self.bands.index(band)
        except ValueError:
            raise ConfigError(f"band {band!r} not in cube bands {list(self.bands)}") from None

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "dates": [d.isoformat() for d in self.dates],
            "bands": list(self.bands),
            "pixel_size_m": self.pixel_size_m,
            "year": self.year,
        }


@dataclass(frozen=True)
class TimeSeriesCube:
    """Reflectance/backscatter stack indexed ``(date, band, row, col)``."""

    manifest: CubeManifest
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        valid = np.asarray(self.valid, dtype=bool)
        d, b, h, w = self.manifest.shape
        if values.shape != (d, b, h, w):
            raise ContractError(f"values shape {values.shape} != manifest shape {(d, b, h, w)}")
        if valid.shape != (d, h, w):
            raise ContractError(f"valid shape {valid.shape} != {(d, h, w)}")
        if not np.isfinite(values).all(axis=1)[valid].all():
            raise ContractError("non-finite values at valid observations")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid))

    @property
    def dates(self) -> tuple[date, ...]:
        return self.manifest.dates

    @property
    def bands(self) -> tuple[str, ...]:
        return self.manifest.bands

    @property
    def year(self) -> int:
        return self.manifest.year

    def band(self, name: str) -> np.ndarray:
        """(date, row, col) plane for one band."""
        return self.values[:, self.manifest.band_index(name)]

    def rows(self, start: int, stop: int) -> "TimeSeriesCube":
        """Row slice ``[start, stop)`` as a standalone cube (no copy)."""
        m = self.manifest
        sub = CubeManifest(m.width, stop - start, m.dates, m.bands, m.pixel_size_m, m.year, m.nodata_policy)
        return TimeSeriesCube(sub, self.values[:, :, start:stop], self.valid[:, start:stop])


@dataclass(frozen=True)
class FeatureRaster:
    """Per-pixel feature vectors indexed ``(feature, row, col)``.

    ``valid`` marks features that could be computed for a pixel (absent means
    all valid); ``imputed`` marks values filled by temporal interpolation.
    """

    width: int
    height: int
    feature_names: tuple[str, ...]
    values: np.ndarray
    source: str
    year: int
    valid: np.ndarray | None = None
    imputed: np.ndarray | None = None
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        values = np.asarray(self.values, dtype=np.float32)
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ContractError("feature names must be unique")
        if values.shape != (len(self.feature_names), self.height, self.width):
            raise ContractError(
                f"values shape {values.shape} != ({len(self.feature_names)}, {self.height}, {self.width})"
            )
        if self.source not in FEATURE_SOURCES:
            raise ContractError(f"unknown feature source {self.source!r}")
        object.__setattr__(self, "values", _frozen(values))
        for name in ("valid", "imputed"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=bool)
                if arr.shape != values.shape:
                    raise ContractError(f"{name} mask shape {arr.shape} != {values.shape}")
                object.__setattr__(self, name, _frozen(arr))
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def pixel_valid(self) -> np.ndarray:
        """(row, col) mask: every feature valid."""
        if self.valid is None:
            return np.ones((self.height, self.width), dtype=bool)
        return self.valid.all(axis=0)

    def matrix(self, rows: np.ndarray | None = None, cols: np.ndarray | None = None) -> np.ndarray:
        """Pixels as an ``(n_pixels, n_features)`` float64 matrix.

        Without indices the whole raster is returned in row-major pixel order.
        """
        if rows is None:
            return self.values.reshape(self.n_features, -1).T.astype(np.float64)
        return self.values[:, rows, cols].T.astype(np.float64)


@dataclass(frozen=True)
class LabelEntry:
    polygon_id: int
    class_id: int
    pixels: np.ndarray  # (n, 2) int rows of (row, col)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "pixels", _frozen(px))


@dataclass(frozen=True)
class LabelSet:
    width: int
    height: int
    entries: tuple[LabelEntry, ...]
    class_table: Mapping[int, str]
    task: str = "landcover"
    year: int = 2018
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "class_table", {int(k): str(v) for k, v in self.class_table.items()})
        object.__setattr__(self, "metadata", dict(self.metadata))
        if self.task not in TASKS:
            raise ContractError(f"unknown task {self.task!r}")
        ids = [e.polygon_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ContractError("polygon ids must be unique")
        seen = np.zeros((self.height, self.width), dtype=bool)
        for e in self.entries:
            if e.class_id not in self.class_table:
                raise ContractError(f"polygon {e.polygon_id}: class {e.class_id} not in class table")
            px = e.pixels
            if len(px) == 0:
                continue
            if px.min() < 0 or (px[:, 0] >= self.height).any() or (px[:, 1] >= self.width).any():
                raise ContractError(f"polygon {e.polygon_id}: pixel out of bounds")
            hit = seen[px[:, 0], px[:, 1]]
            if hit.any() or len(np.unique(px[:, 0] * self.width + px[:, 1])) != len(px):
                raise ContractError(f"polygon {e.polygon_id}: pixel already assigned")
            seen[px[:, 0], px[:, 1]] = True

    @property
    def n_pixels(self) -> int:
        return sum(len(e.pixels) for e in self.entries)

    @property
    def polygon_ids(self) -> list[int]:
        return [e.polygon_id for e in self.entries]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Flat ``(rows, cols, class_ids, polygon_ids)`` over all labeled pixels."""
        if not self.entries:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty, empty
        px = np.concatenate([e.pixels for e in self.entries])
        cls = np.concatenate([np.full(len(e.pixels), e.class_id, dtype=np.int64) for e in self.entries])
        pid = np.concatenate([np.full(len(e.pixels), e.polygon_id, dtype=np.int64) for e in self.entries])
        return px[:, 0], px[:, 1], cls, pid

    def pixel_counts(self) -> dict[int, int]:
        counts = {c: 0 for c in self.class_table}
        for e in self.entries:
            counts[e.class_id] += len(e.pixels)
        return counts

    def polygon_counts(self) -> dict[int, int]:
        counts = {c: 0 for c in self.class_table}
        for e in self.entries:
            counts[e.class_id] += 1
        return counts

    def subset(self, polygon_ids: Iterable[int]) -> "LabelSet":
        keep = set(polygon_ids)
        return LabelSet(
            self.width,
            self.height,
            [e for e in self.entries if e.polygon_id in keep],
            self.class_table,
            self.task,
            self.year,
            self.metadata,
        )

    def with_entries(self, entries: Sequence[LabelEntry], class_table: Mapping[int, str] | None = None) -> "LabelSet":
        return LabelSet(
            self.width,
            self.height,
            entries,
            self.class_table if class_table is None else class_table,
            self.task,
            self.year,
            self.metadata,
        )


@dataclass(frozen=True)
class ClassMap:
    width: int
    height: int
    class_ids: np.ndarray
    class_table: Mapping[int, str]
    year: int = 2018

    def __post_init__(self):
        ids = np.asarray(self.class_ids, dtype=np.int32)
        object.__setattr__(self, "class_table", {int(k): str(v) for k, v in self.class_table.items()})
        if ids.shape != (self.height, self.width):
            raise ContractError(f"class map shape {ids.shape} != {(self.height, self.width)}")
        allowed = np.array(sorted(set(self.class_table) | {NODATA}), dtype=np.int32)
        if not np.isin(ids, allowed).all():
            raise ContractError("class map contains ids outside the class table")
        object.__setattr__(self, "class_ids", _frozen(ids))

    @property
    def grid(self) -> tuple[int, int]:
        return (self.width, self.height)


@dataclass(frozen=True)
class ClassProbabilityMap:
    """Per-pixel class probabilities ``(class, row, col)``; class order in ``class_ids``."""

    width: int
    height: int
    class_ids: tuple[int, ...]
    probs: np.ndarray
    class_table: Mapping[int, str]
    year: int = 2018
    ties: int = 0

    def __post_init__(self):
        object.__setattr__(self, "class_ids", tuple(int(c) for c in self.class_ids))
        object.__setattr__(self, "class_table", {int(k): str(v) for k, v in self.class_table.items()})
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.shape != (len(self.class_ids), self.height, self.width):
            raise ContractError(f"probability shape {probs.shape} mismatches classes/grid")
        if list(self.class_ids) != sorted(self.class_ids):
            raise ContractError("class ids must be sorted ascending")
        object.__setattr__(self, "probs", _frozen(probs))

    def argmax(self) -> ClassMap:
        labels, _ = argmax_lowest(self.probs, self.class_ids, axis=0)
        return ClassMap(self.width, self.height, labels, self.class_table, self.year)


def argmax_lowest(probs: np.ndarray, class_ids: Sequence[int], axis: int = -1) -> tuple[np.ndarray, int]:
    """Argmax mapped to class ids; ties go to the lowest id. Returns (labels, tie count).

    ``class_ids`` must be ascending so that ``np.argmax`` (first maximum) picks the lowest.
    """
    idx = np.argmax(probs, axis=axis)
    top = np.max(probs, axis=axis, keepdims=True)
    ties = int(((probs == top).sum(axis=axis) > 1).sum())
    return np.asarray(class_ids, dtype=np.int32)[idx], ties


# --------------------------------------------------------------------------- I/O helpers


def _read_json(path: Path) -> dict:
    if not path.is_file():
        raise FormatError(f"missing manifest {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise FormatError(f"{path}: manifest must be an object")
    return data


def _field(data: dict, key: str, kind, path: Path):
    if key not in data:
        raise FormatError(f"{path}: missing key", key)
    value = data[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise FormatError(f"{path}: expected integer", key)
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise FormatError(f"{path}: expected number", key)
    if kind is list and not isinstance(value, list):
        raise FormatError(f"{path}: expected list", key)
    return value


def _read_payload(path: Path, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
    itemsize = np.dtype(dtype).itemsize
    expected = int(np.prod(shape)) * itemsize
    if not path.is_file():
        raise SizeError(path, expected, 0)
    raw = path.read_bytes()
    if len(raw) != expected:
        raise SizeError(path, expected, len(raw))
    return np.frombuffer(raw, dtype=dtype).reshape(shape)


def _write_payload(path: Path, array: np.ndarray, dtype: str) -> None:
    path.write_bytes(np.ascontiguousarray(array, dtype=dtype).tobytes())


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _class_table_json(table: Mapping[int, str]) -> dict:
    return {str(k): v for k, v in sorted(table.items())}


def _parse_class_table(raw, path: Path) -> dict[int, str]:
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: class table must be an object", "class_table")
    try:
        return {int(k): str(v) for k, v in raw.items()}
    except ValueError:
        raise FormatError(f"{path}: class ids must be integers", "class_table") from None


# --------------------------------------------------------------------------- cubes


def write_cube(cube: TimeSeriesCube, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _write_json(path / CUBE_MANIFEST, cube.manifest.to_json())
    _write_payload(path / "values.bin", cube.values, "<f4")
    _write_payload(path / "valid.bin", cube.valid, "u1")
    return path


def read_cube(path: str | Path) -> TimeSeriesCube:
    path = Path(path)
    data = _read_json(path / CUBE_MANIFEST)
    mpath = path / CUBE_MANIFEST
    width = _field(data, "width", int, mpath)
    height = _field(data, "height", int, mpath)
    raw_dates = _field(data, "dates", list, mpath)
    bands = _field(data, "bands", list, mpath)
    pixel_size = _field(data, "pixel_size_m", float, mpath)
    year = _field(data, "year", int, mpath)
    extra = set(data) - set(CUBE_KEYS)
    if extra:
        raise FormatError(f"{mpath}: unexpected keys {sorted(extra)}", sorted(extra)[0])
    try:
        dates = tuple(date.fromisoformat(d) for d in raw_dates)
    except (TypeError, ValueError):
        raise FormatError(f"{mpath}: dates must be ISO-8601 calendar dates", "dates") from None
    if not all(isinstance(b, str) for b in bands):
        raise FormatError(f"{mpath}: band identifiers must be strings", "bands")
    manifest = CubeManifest(width, height, dates, bands, float(pixel_size), year)
    d, b, h, w = manifest.shape
    values = _read_payload(path / "values.bin", "<f4", (d, b, h, w))
    valid = _read_payload(path / "valid.bin", "u1", (d, h, w))
    if valid.max(initial=0) > 1:
        raise FormatError(f"{path / 'valid.bin'}: mask bytes must be 0 or 1", "valid")
    return TimeSeriesCube(manifest, values.astype(np.float32), valid.astype(bool))


# --------------------------------------------------------------------------- feature rasters


def write_feature_raster(fr: FeatureRaster, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "width": fr.width,
        "height": fr.height,
        "year": fr.year,
        "source": fr.source,
        "feature_names": list(fr.feature_names),
        "n_features": fr.n_features,
        "has_valid": fr.valid is not None,
        "has_imputed": fr.imputed is not None,
        "metadata": dict(fr.metadata),
    }
    _write_json(path / "features.json", meta)
    _write_payload(path / "values.bin", fr.values, "<f4")
    if fr.valid is not None:
        _write_payload(path / "valid.bin", fr.valid, "u1")
    if fr.imputed is not None:
        _write_payload(path / "imputed.bin", fr.imputed, "u1")
    return path


def read_feature_raster(path: str | Path) -> FeatureRaster:
    path = Path(path)
    mpath = path / "features.json"
    data = _read_json(mpath)
    width = _field(data, "width", int, mpath)
    height = _field(data, "height", int, mpath)
    year = _field(data, "year", int, mpath)
    names = _field(data, "feature_names", list, mpath)
    source = data.get("source")
    if source not in FEATURE_SOURCES:
        raise FormatError(f"{mpath}: unknown source {source!r}", "source")
    if "n_features" in data and data["n_features"] != len(names):
        raise FormatError(f"{mpath}: n_features disagrees with feature_names", "n_features")
    shape = (len(names), height, width)
    values = _read_payload(path / "values.bin", "<f4", shape).astype(np.float32)
    valid = _read_payload(path / "valid.bin", "u1", shape).astype(bool) if data.get("has_valid") else None
    imputed = _read_payload(path / "imputed.bin", "u1", shape).astype(bool) if data.get("has_imputed") else None
    return FeatureRaster(width, height, names, values, source, year, valid, imputed, data.get("metadata") or {})


# --------------------------------------------------------------------------- labels


def write_labels(labels: LabelSet, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["polygon_id", "class_id", "row", "col"])
        for e in labels.entries:
            for r, c in e.pixels:
                writer.writerow([e.polygon_id, e.class_id, int(r), int(c)])
    meta = {
        "width": labels.width,
        "height": labels.height,
        "task": labels.task,
        "year": labels.year,
        "class_table": _class_table_json(labels.class_table),
        "polygon_ids": labels.polygon_ids,
        "metadata": dict(labels.metadata),
    }
    _write_json(path / "classes.json", meta)
    return path


def read_labels(path: str | Path) -> LabelSet:
    path = Path(path)
    mpath = path / "classes.json"
    data = _read_json(mpath)
    width = _field(data, "width", int, mpath)
    height = _field(data, "height", int, mpath)
    table = _parse_class_table(data.get("class_table"), mpath)
    order = data.get("polygon_ids") or []
    pixels: dict[int, list[tuple[int, int]]] = {pid: [] for pid in order}
    classes: dict[int, int] = {}
    lpath = path / "labels.csv"
    if not lpath.is_file():
        raise FormatError(f"missing label table {lpath}")
    with open(lpath, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["polygon_id", "class_id", "row", "col"]:
            raise FormatError(f"{lpath}: bad header {header}", "header")
        for lineno, row in enumerate(reader, start=2):
            try:
                pid, cid, r, c = (int(v) for v in row)
            except ValueError:
                raise FormatError(f"{lpath}:{lineno}: expected four integers", "row") from None
            if classes.setdefault(pid, cid) != cid:
                raise FormatError(f"{lpath}:{lineno}: polygon {pid} has two classes", "class_id")
            pixels.setdefault(pid, []).append((r, c))
    entries = [LabelEntry(pid, classes[pid], np.array(px, dtype=np.int64).reshape(-1, 2)) for pid, px in pixels.items() if pid in classes]
    return LabelSet(width, height, entries, table, data.get("task", "landcover"), data.get("year", 0), data.get("metadata") or {})


# --------------------------------------------------------------------------- class maps


def write_class_map(cm: ClassMap, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _write_json(path / "classmap.json", {
        "width": cm.width,
        "height": cm.height,
        "year": cm.year,
        "nodata": NODATA,
        "class_table": _class_table_json(cm.class_table),
    })
    _write_payload(path / "classmap.bin", cm.class_ids, "<i4")
    return path


def read_class_map(path: str | Path) -> ClassMap:
    path = Path(path)
    mpath = path / "classmap.json"
    data = _read_json(mpath)
    width = _field(data, "width", int, mpath)
    height = _field(data, "height", int, mpath)
    table = _parse_class_table(data.get("class_table"), mpath)
    ids = _read_payload(path / "classmap.bin", "<i4", (height, width))
    return ClassMap(width, height, ids.astype(np.int32), table, data.get("year", 0))


def write_probability_map(pm: ClassProbabilityMap, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _write_json(path / "probs.json", {
        "width": pm.width,
        "height": pm.height,
        "year": pm.year,
        "class_ids": list(pm.class_ids),
        "class_table": _class_table_json(pm.class_table),
        "ties": pm.ties,
    })
    _write_payload(path / "probs.bin", pm.probs, "<f4")
    return path


def read_probability_map(path: str | Path) -> ClassProbabilityMap:
    path = Path(path)
    mpath = path / "probs.json"
    data = _read_json(mpath)
    width = _field(data, "width", int, mpath)
    height = _field(data, "height", int, mpath)
    class_ids = _field(data, "class_ids", list, mpath)
    probs = _read_payload(path / "probs.bin", "<f4", (len(class_ids), height, width))
    return ClassProbabilityMap(
        width, height, class_ids, probs.astype(np.float64),
        _parse_class_table(data.get("class_table"), mpath), data.get("year", 0), data.get("ties", 0),
    )


# --------------------------------------------------------------------------- labels from polygons


def points_in_ring(x: np.ndarray, y: np.ndarray, ring: np.ndarray) -> np.ndarray:
    """Even-odd test of points against a closed ring (vertices as ``(x, y)``)."""
    inside = np.zeros(x.shape, dtype=bool)
    n = len(ring)
    for i in range(n):
        xi, yi = ring[i]
        xj, yj = ring[i - 1]
        crosses = (yi > y) != (yj > y)
        if not crosses.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = (xj - xi) * (y - yi) / (yj - yi) + xi
        inside ^= crosses & (x < x_cross)
    return inside


def _clean_ring(ring, polygon_id) -> np.ndarray:
    ring = np.asarray(ring, dtype=np.float64).reshape(-1, 2)
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(ring) < 3:
        raise GeometryError(f"polygon {polygon_id}: ring needs at least 3 vertices, got {len(ring)}")
    if not np.isfinite(ring).all():
        raise GeometryError(f"polygon {polygon_id}: non-finite vertex")
    return ring


def rasterize_labels(
    polygons: Sequence[tuple[int, int, Sequence[Sequence[float]]]],
    grid: tuple[int, int],
    class_table: Mapping[int, str] | None = None,
    task: str = "landcover",
    year: int = 2018,
) -> LabelSet:
    """Burn polygons into pixel assignments using pixel-center even-odd inclusion.

    Where polygons overlap the later one in ``polygons`` keeps the pixel; the
    number of contested pixels is logged and stored as ``metadata["overlap_pixels"]``.
    """
    width, height = grid
    owner = np.full((height, width), -1, dtype=np.int64)
    classes: dict[int, int] = {}
    order: list[int] = []
    overlaps = 0
    for polygon_id, class_id, ring in polygons:
        ring = _clean_ring(ring, polygon_id)
        if polygon_id in classes:
            raise GeometryError(f"duplicate polygon id {polygon_id}")
        classes[polygon_id] = int(class_id)
        order.append(polygon_id)
        c0 = max(int(np.floor(ring[:, 0].min() - 0.5)), 0)
        c1 = min(int(np.ceil(ring[:, 0].max() - 0.5)), width - 1)
        r0 = max(int(np.floor(ring[:, 1].min() - 0.5)), 0)
        r1 = min(int(np.ceil(ring[:, 1].max() - 0.5)), height - 1)
        if c1 < c0 or r1 < r0:
            continue
        rr, cc = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
        hit = points_in_ring(cc + 0.5, rr + 0.5, ring)
        window = owner[r0 : r1 + 1, c0 : c1 + 1]
        overlaps += int((hit & (window >= 0)).sum())
        window[hit] = polygon_id
    if overlaps:
        LOGGER.warning("%d pixels claimed by more than one polygon; later polygons win", overlaps)
    if class_table is None:
        class_table = {c: str(c) for c in sorted(set(classes.values()))}
    entries = []
    flat = owner.ravel()
    sort_idx = np.argsort(flat, kind="stable")
    sorted_owner = flat[sort_idx]
    for pid in order:
        lo, hi = np.searchsorted(sorted_owner, [pid, pid + 1])
        cells = sort_idx[lo:hi]
        if len(cells) == 0:
            LOGGER.info("polygon %s covers no pixel centers; dropped", pid)
            continue
        entries.append(LabelEntry(pid, classes[pid], np.stack([cells // width, cells % width], axis=1)))
    return LabelSet(width, height, entries, class_table, task, year, {"overlap_pixels": overlaps})


def merge_classes(labels: LabelSet, rules: Mapping[int, int]) -> LabelSet:
    """Relabel entries by ``old -> new`` rules and drop classes left without entries."""
    for old, new in rules.items():
        if old not in labels.class_table:
            raise ConfigError(f"merge rule source class {old} not in class table")
        if new not in labels.class_table:
            raise ConfigError(f"merge rule {old} -> {new} targets unknown class {new}")
    if not rules:
        return labels
    entries = [LabelEntry(e.polygon_id, rules.get(e.class_id, e.class_id), e.pixels) for e in labels.entries]
    used = {e.class_id for e in entries}
    table = {k: v for k, v in labels.class_table.items() if k in used}
    return labels.with_entries(entries, table)
