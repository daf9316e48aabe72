"""Synthetic multi-year scenes with known per-pixel truth.

Fields are a seeded Voronoi partition of the grid. Every field carries a land
cover class (cropland fields also a crop type) and a persistent field-level
offset, so the same field looks alike across years unless its class changes.
Reflectance follows double-logistic seasonal curves; embeddings are class
prototypes plus field offset plus pixel noise. Label polygons are the Voronoi
cells shrunk toward their seed, so every labeled pixel agrees with the truth map.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import norm

from .embeddings import EmbeddingRaster, write_embeddings
from .errors import ConfigError
from .indices import S1_BANDS, S2_BANDS
from .rastercube import (
    NODATA,
    ClassMap,
    CubeManifest,
    LabelEntry,
    LabelSet,
    TimeSeriesCube,
    rasterize_labels,
    write_class_map,
    write_cube,
    write_labels,
)

LOGGER = logging.getLogger(__name__)

LANDCOVER_CLASSES = ("cropland", "water", "shrubland", "bare_soil", "wetland", "built_up")
LANDCOVER_SHARES = (0.60, 0.06, 0.12, 0.08, 0.06, 0.08)
CROP_CLASSES = ("groundnut", "millet", "sorghum", "cowpea", "fallow")
CROP_SHARES = (0.35, 0.35, 0.12, 0.08, 0.10)
CROPLAND = 1


@dataclass(frozen=True)
class ClassSignature:
    """Spectral/temporal identity of one class.

    ``base``/``amplitude`` are per optical band; ``sos``/``eos`` are day-of-year
    inflection points of the double-logistic green-up and senescence.
    """

    name: str
    base: tuple[float, ...]
    amplitude: tuple[float, ...]
    sos: float
    eos: float
    sar_base: tuple[float, float]
    sar_amplitude: tuple[float, float]
    prototype: tuple[float, ...]


@dataclass(frozen=True)
class SceneSpec:
    width: int = 256
    height: int = 256
    classes: tuple[ClassSignature, ...] = ()
    class_shares: tuple[float, ...] = LANDCOVER_SHARES
    crop_classes: tuple[ClassSignature, ...] = ()
    crop_shares: tuple[float, ...] = CROP_SHARES
    years: tuple[int, ...] = (2018, 2019, 2021)
    drift: tuple[float, ...] = (0.0, 0.0, 0.0)
    change_rate: float = 0.02
    crop_persistence: float = 0.5
    mean_field_px: float = 150.0
    noise_sigma: float = 0.1
    field_sigma: float | None = None  # None: same as noise_sigma
    reflectance_sigma: float | None = None  # None: 0.2 * noise_sigma
    n_dates: int = 36
    cloud_max: float = 0.4
    labeled_polygons: int = 120
    min_polygons_per_class: int = 6
    label_persistence: float = 0.8
    label_inset: float = 0.8
    embedding_dim: int = 128
    provider: str = "synthetic"
    bayes_error_bound: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ConfigError("a scene needs at least two classes")
        if len(self.class_shares) != len(self.classes):
            raise ConfigError("class_shares must match classes")
        if self.crop_classes and len(self.crop_shares) != len(self.crop_classes):
            raise ConfigError("crop_shares must match crop_classes")
        if self.field_sigma is None:
            object.__setattr__(self, "field_sigma", self.noise_sigma)
        if self.reflectance_sigma is None:
            object.__setattr__(self, "reflectance_sigma", 0.2 * self.noise_sigma)
        if self.noise_sigma < 0 or self.field_sigma < 0 or self.reflectance_sigma < 0:
            raise ConfigError("noise levels must be >= 0")
        if len(self.drift) != len(self.years):
            raise ConfigError("one drift value per year is required")
        protos = np.array([c.prototype for c in self.classes + self.crop_classes])
        if protos.shape[1] != self.embedding_dim:
            raise ConfigError("prototype length must equal embedding_dim")
        if len({tuple(p) for p in protos}) != len(protos):
            raise ConfigError("class prototypes must be distinct")

    @property
    def landcover_table(self) -> dict[int, str]:
        return {i + 1: c.name for i, c in enumerate(self.classes)}

    @property
    def crop_table(self) -> dict[int, str]:
        return {i + 1: c.name for i, c in enumerate(self.crop_classes)}


def _rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent keyed stream (Philox counter-based generator)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=keys)))


def default_scene_spec(seed: int = 0, **overrides) -> SceneSpec:
    """Six land-cover classes and five crop types with distinct phenology and prototypes."""
    dim = overrides.get("embedding_dim", 128)
    rng = _rng(seed, 99)
    nb = len(S2_BANDS)
    # base reflectance per band (B02..B12) and seasonal amplitude
    shapes = {
        "cropland": ([.05, .08, .08, .12, .20, .24, .26, .27, .24, .18], [-.01, .02, -.03, .02, .08, .12, .18, .18, -.02, -.04], 200, 290),
        "water": ([.06, .05, .03, .02, .015, .012, .01, .01, .005, .004], [0] * nb, 180, 300),
        "shrubland": ([.06, .09, .11, .15, .20, .22, .24, .25, .28, .22], [-.005, .01, -.01, .01, .03, .05, .06, .06, -.01, -.01], 190, 330),
        "bare_soil": ([.12, .16, .22, .25, .27, .28, .29, .30, .36, .32], [0] * nb, 180, 300),
        "wetland": ([.04, .06, .05, .09, .16, .20, .22, .22, .14, .08], [-.005, .01, -.01, .02, .06, .08, .10, .10, -.02, -.02], 210, 340),
        "built_up": ([.14, .15, .17, .18, .19, .20, .21, .21, .25, .23], [0] * nb, 180, 300),
    }
    crops = {
        "groundnut": (190, 260, 0.9),
        "millet": (200, 285, 1.0),
        "sorghum": (205, 300, 1.1),
        "cowpea": (215, 270, 0.7),
        "fallow": (185, 320, 0.4),
    }
    protos = rng.normal(0.0, 1.0, (len(shapes), dim)) / np.sqrt(dim) * 1.5

    def sig(name, base, amp, sos, eos, proto, sar_scale=1.0):
        sar_base = (0.08 * sar_scale, 0.02 * sar_scale) if name != "water" else (0.01, 0.002)
        sar_amp = (0.04 * sum(a > 0 for a in amp) / nb, 0.02 * sum(a > 0 for a in amp) / nb)
        return ClassSignature(name, tuple(base), tuple(amp), float(sos), float(eos),
                              sar_base, sar_amp, tuple(float(v) for v in proto))

    classes = tuple(sig(n, *shapes[n], protos[i], 1.0 + 0.1 * i) for i, n in enumerate(LANDCOVER_CLASSES))
    crop_offsets = rng.normal(0.0, 1.0, (len(crops), dim)) / np.sqrt(dim) * 0.9
    base, amp, _, _ = shapes["cropland"]
    crop_sigs = tuple(
        sig(n, base, [a * s for a in amp], sos, eos, protos[0] + crop_offsets[i])
        for i, (n, (sos, eos, s)) in enumerate(crops.items())
    )
    overrides.setdefault("crop_classes", crop_sigs)
    return SceneSpec(classes=classes, seed=seed, **overrides)


# --------------------------------------------------------------------------- geometry


def _clip_halfplane(poly: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """Keep the part of convex ``poly`` with ``normal . p <= offset``."""
    if len(poly) == 0:
        return poly
    d = poly @ normal - offset
    out = []
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        da, db = d[i], d[(i + 1) % n]
        if da <= 0:
            out.append(a)
        if (da < 0 < db) or (db < 0 < da):
            t = da / (da - db)
            out.append(a + t * (b - a))
    return np.array(out).reshape(-1, 2)


def voronoi_cells(seeds: np.ndarray, width: int, height: int) -> list[np.ndarray]:
    """Convex Voronoi cells of ``seeds`` clipped to the ``[0,width] x [0,height]`` rectangle."""
    tree = cKDTree(seeds)
    rect = np.array([[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]])
    cells = []
    k = min(len(seeds), 40)
    for i, s in enumerate(seeds):
        poly = rect.copy()
        dist, nbrs = tree.query(s, k=k)
        order = list(zip(np.atleast_1d(dist), np.atleast_1d(nbrs)))
        exhausted = False
        while True:
            for dj, j in order:
                if j == i:
                    continue
                radius = np.sqrt(((poly - s) ** 2).sum(axis=1)).max() if len(poly) else 0.0
                if dj > 2 * radius:
                    exhausted = True
                    break
                normal = seeds[j] - s
                poly = _clip_halfplane(poly, normal, (seeds[j] @ seeds[j] - s @ s) / 2.0)
            if exhausted or k >= len(seeds):
                break
            k = len(seeds)
            dist, nbrs = tree.query(s, k=k)
            order = list(zip(dist, nbrs))
            poly = rect.copy()
        cells.append(poly)
    return cells


# --------------------------------------------------------------------------- scene containers


@dataclass(frozen=True)
class YearScene:
    year: int
    optical: TimeSeriesCube | None
    sar: TimeSeriesCube | None
    embeddings: EmbeddingRaster
    labels: LabelSet
    truth: ClassMap
    crop_labels: LabelSet | None
    crop_truth: ClassMap | None
    field_class: np.ndarray
    field_crop: np.ndarray


@dataclass(frozen=True)
class Scene:
    spec: SceneSpec
    field_ids: np.ndarray
    cells: tuple[np.ndarray, ...]
    years: dict[int, YearScene]
    bayes_overlap: float

    def __getitem__(self, year: int) -> YearScene:
        return self.years[year]


def estimate_overlap(spec: SceneSpec) -> float:
    """Union bound on pairwise prototype confusion for Gaussian embedding noise."""
    protos = np.array([c.prototype for c in spec.classes])
    sigma = np.hypot(spec.noise_sigma, spec.field_sigma)
    if sigma == 0:
        return 0.0
    total = 0.0
    for i in range(len(protos)):
        for j in range(i + 1, len(protos)):
            d = np.linalg.norm(protos[i] - protos[j])
            total += 2 * norm.sf(d / (2 * sigma))
    return float(total / len(protos))


def _dates(year: int, n: int) -> list[date]:
    start = date(year, 1, 1)
    span = (date(year, 12, 31) - start).days
    return [start + timedelta(days=int(round(i * span / max(n - 1, 1)))) for i in range(n)]


def _double_logistic(doy: np.ndarray, sos: float, eos: float, rate: float = 8.0) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-(doy - sos) / rate)) + 1.0 / (1.0 + np.exp((doy - eos) / rate)) - 1.0


def _assign(rng, n: int, shares: Sequence[float]) -> np.ndarray:
    p = np.asarray(shares, dtype=np.float64)
    return rng.choice(len(p), size=n, p=p / p.sum()) + 1


def _signature(spec: SceneSpec, cls: int, crop: int) -> ClassSignature:
    if cls == CROPLAND and spec.crop_classes and crop > 0:
        return spec.crop_classes[crop - 1]
    return spec.classes[cls - 1]


def _shifted(sig: ClassSignature, drift: float, direction: np.ndarray) -> ClassSignature:
    if drift == 0:
        return sig
    proto = np.asarray(sig.prototype) + drift * direction
    return replace(sig, prototype=tuple(proto), sos=sig.sos + 20 * drift, eos=sig.eos + 20 * drift)


def generate_scene(spec: SceneSpec, with_cubes: bool = True) -> Scene:
    """Cubes, embeddings, labels and truth maps for every year of ``spec``. Deterministic in ``spec.seed``."""
    overlap = estimate_overlap(spec)
    if overlap > spec.bayes_error_bound:
        LOGGER.warning("class prototypes overlap: estimated confusion %.3f exceeds bound %.3f",
                       overlap, spec.bayes_error_bound)
    w, h = spec.width, spec.height
    n_fields = max(len(spec.classes), int(round(w * h / spec.mean_field_px)))
    geo = _rng(spec.seed, 1)
    seeds = geo.uniform([0, 0], [w, h], size=(n_fields, 2))
    rr, cc = np.mgrid[0:h, 0:w]
    centers = np.stack([cc.ravel() + 0.5, rr.ravel() + 0.5], axis=1)
    _, nearest = cKDTree(seeds).query(centers)
    field_ids = nearest.reshape(h, w).astype(np.int64)
    field_px = np.bincount(field_ids.ravel(), minlength=n_fields)
    cells = voronoi_cells(seeds, w, h)
    label_rings = [s + spec.label_inset * (c - s) for s, c in zip(seeds, cells)]

    assign = _rng(spec.seed, 2)
    field_class = _assign(assign, n_fields, spec.class_shares)
    field_crop = np.where(field_class == CROPLAND, _assign(assign, n_fields, spec.crop_shares), 0) \
        if spec.crop_classes else np.zeros(n_fields, dtype=np.int64)
    n_sig = len(spec.classes) + len(spec.crop_classes)
    drift_dirs = _rng(spec.seed, 3).normal(size=(n_sig, spec.embedding_dim))
    drift_dirs /= np.linalg.norm(drift_dirs, axis=1, keepdims=True)

    years: dict[int, YearScene] = {}
    prev_labeled: list[int] = []
    for yi, year in enumerate(spec.years):
        if yi > 0:
            ch = _rng(spec.seed, 4, yi)
            flip = ch.random(n_fields) < spec.change_rate
            new_cls = _assign(ch, n_fields, spec.class_shares)
            field_class = np.where(flip & (new_cls != field_class), new_cls, field_class)
            if spec.crop_classes:
                keep = ch.random(n_fields) < spec.crop_persistence
                redraw = _assign(ch, n_fields, spec.crop_shares)
                field_crop = np.where(field_class == CROPLAND, np.where(keep & (field_crop > 0), field_crop, redraw), 0)
        field_class = field_class.copy()
        field_crop = field_crop.copy()
        sig_key = np.where(field_crop > 0, len(spec.classes) + field_crop - 1, field_class - 1)
        sigs = [_shifted(_signature(spec, c + 1 if c < len(spec.classes) else CROPLAND,
                                    c - len(spec.classes) + 1 if c >= len(spec.classes) else 0),
                         spec.drift[yi], drift_dirs[c]) for c in range(n_sig)]
        pix_sig = sig_key[field_ids]

        emb = _embeddings(spec, sigs, sig_key, field_ids, pix_sig, yi)
        optical = sar = None
        if with_cubes:
            optical, sar = _cubes(spec, sigs, sig_key, field_ids, pix_sig, year, yi)

        truth = ClassMap(w, h, field_class[field_ids], spec.landcover_table, year)
        crop_truth = None
        if spec.crop_classes:
            crop_truth = ClassMap(w, h, np.where(field_crop[field_ids] > 0, field_crop[field_ids], NODATA),
                                  spec.crop_table, year)
        labeled = _pick_labeled(spec, field_class, field_px, prev_labeled, yi)
        prev_labeled = labeled
        labels = rasterize_labels(
            [(int(f), int(field_class[f]), label_rings[f]) for f in labeled], (w, h),
            spec.landcover_table, "landcover", year,
        )
        crop_labels = None
        if spec.crop_classes:
            crop_fields = [f for f in labeled if field_crop[f] > 0]
            crop_labels = rasterize_labels(
                [(int(f), int(field_crop[f]), label_rings[f]) for f in crop_fields], (w, h),
                spec.crop_table, "croptype", year,
            )
        years[year] = YearScene(year, optical, sar, emb, labels, truth, crop_labels, crop_truth,
                                field_class, field_crop)
    return Scene(spec, field_ids, tuple(cells), years, overlap)


def _field_offsets(spec: SceneSpec, sig_key: np.ndarray, size: int, purpose: int) -> np.ndarray:
    """Field-level offsets keyed by (field, signature): stable while a field keeps its class."""
    n_sig = len(spec.classes) + len(spec.crop_classes)
    table = _rng(spec.seed, 5, purpose).normal(size=(n_sig, len(sig_key), size))
    return table[sig_key, np.arange(len(sig_key))]


def _embeddings(spec, sigs, sig_key, field_ids, pix_sig, yi) -> EmbeddingRaster:
    h, w = field_ids.shape
    protos = np.array([s.prototype for s in sigs])
    offsets = _field_offsets(spec, sig_key, spec.embedding_dim, 0) * spec.field_sigma
    noise = _rng(spec.seed, 6, yi).normal(size=(h, w, spec.embedding_dim)) * spec.noise_sigma
    values = protos[pix_sig] + offsets[field_ids] + noise
    year = spec.years[yi]
    return EmbeddingRaster.from_matrix(np.moveaxis(values, -1, 0).astype(np.float32), spec.provider, year)


def _cubes(spec, sigs, sig_key, field_ids, pix_sig, year, yi):
    h, w = field_ids.shape
    dates = _dates(year, spec.n_dates)
    doy = np.array([d.timetuple().tm_yday for d in dates], dtype=np.float64)
    nb = len(S2_BANDS)
    curves = np.array([
        np.asarray(s.base)[None, :] + np.asarray(s.amplitude)[None, :] * _double_logistic(doy, s.sos, s.eos)[:, None]
        for s in sigs
    ])  # (sig, date, band)
    sar_curves = np.array([
        np.asarray(s.sar_base)[None, :] + np.asarray(s.sar_amplitude)[None, :] * _double_logistic(doy, s.sos, s.eos)[:, None]
        for s in sigs
    ])
    off = _field_offsets(spec, sig_key, nb + 2, 1) * spec.reflectance_sigma
    rng = _rng(spec.seed, 7, yi)
    opt = curves[pix_sig]  # (h, w, date, band)
    opt = opt + off[field_ids][:, :, None, :nb]
    opt = opt + rng.normal(size=opt.shape) * spec.reflectance_sigma
    opt = np.clip(np.moveaxis(opt, (2, 3), (0, 1)), 1e-4, 1.0)
    cloud_p = rng.uniform(0, spec.cloud_max, size=len(dates))
    coarse = rng.random((len(dates), (h + 7) // 8, (w + 7) // 8))
    cloudy = np.repeat(np.repeat(coarse, 8, axis=1), 8, axis=2)[:, :h, :w] < cloud_p[:, None, None]
    opt = np.where(cloudy[:, None], 0.6, opt)
    optical = TimeSeriesCube(CubeManifest(w, h, dates, S2_BANDS, 10.0, year), opt.astype(np.float32), ~cloudy)
    sar = sar_curves[pix_sig] + off[field_ids][:, :, None, nb:] * 0.1
    if spec.noise_sigma > 0:
        sar = sar * rng.gamma(20.0, 1 / 20.0, size=sar.shape)  # multiplicative speckle
    sar = np.clip(np.moveaxis(sar, (2, 3), (0, 1)), 1e-5, None)
    sar_cube = TimeSeriesCube(CubeManifest(w, h, dates, S1_BANDS, 10.0, year), sar.astype(np.float32),
                              np.ones((len(dates), h, w), dtype=bool))
    return optical, sar_cube


def _pick_labeled(spec: SceneSpec, field_class: np.ndarray, field_px: np.ndarray,
                  prev: list[int], yi: int) -> list[int]:
    """Stratified field sample; a ``label_persistence`` share is carried over from last year."""
    rng = _rng(spec.seed, 8, yi)
    candidates = np.flatnonzero(field_px >= 12)
    n_total = min(spec.labeled_polygons, len(candidates))
    chosen: list[int] = []
    if prev:
        carry = [f for f in prev if f in set(candidates.tolist())]
        n_carry = int(round(spec.label_persistence * len(carry)))
        chosen = sorted(rng.choice(carry, size=n_carry, replace=False).tolist()) if n_carry else []
    taken = set(chosen)
    k = len(spec.classes)
    counts = {c: sum(field_class[f] == c for f in chosen) for c in range(1, k + 1)}
    shares = np.asarray(spec.class_shares) / np.sum(spec.class_shares)
    target = {c: max(spec.min_polygons_per_class, int(round(n_total * shares[c - 1]))) for c in range(1, k + 1)}
    for c in range(1, k + 1):
        pool = [f for f in candidates.tolist() if field_class[f] == c and f not in taken]
        need = max(0, target[c] - counts[c])
        pick = rng.permutation(pool)[:need].tolist()
        chosen += pick
        taken.update(pick)
    if len(chosen) > n_total:
        LOGGER.info("stratified minimums raise the labeled polygon count to %d", len(chosen))
    return sorted(int(f) for f in chosen)


def inject_label_noise(labels: LabelSet, flip_rate: float, seed: int) -> LabelSet:
    """Flip each polygon's class, with probability ``flip_rate``, to a uniformly drawn other class."""
    if not 0 <= flip_rate < 1:
        raise ConfigError(f"flip_rate must be in [0, 1), got {flip_rate}")
    if flip_rate == 0:
        return labels
    rng = _rng(seed, 10)
    classes = sorted(labels.class_table)
    entries = []
    flipped = 0
    for e in labels.entries:
        cls = e.class_id
        if rng.random() < flip_rate:
            others = [c for c in classes if c != cls]
            if others:
                cls = int(others[rng.integers(len(others))])
                flipped += 1
        entries.append(LabelEntry(e.polygon_id, cls, e.pixels))
    out = labels.with_entries(entries)
    meta = dict(out.metadata)
    meta.update({"flip_rate": flip_rate, "flipped_polygons": flipped})
    return LabelSet(out.width, out.height, out.entries, out.class_table, out.task, out.year, meta)


def write_scene(scene: Scene, root: str | Path) -> dict[int, dict[str, Path]]:
    """Write every year in the rastercube directory formats; returns the path map."""
    root = Path(root)
    paths: dict[int, dict[str, Path]] = {}
    for year, ys in scene.years.items():
        d = root / str(year)
        p = {"embeddings": write_embeddings(ys.embeddings, d / "embeddings"),
             "labels": write_labels(ys.labels, d / "labels"),
             "truth": write_class_map(ys.truth, d / "truth")}
        if ys.optical is not None:
            p["optical"] = write_cube(ys.optical, d / "optical")
            p["sar"] = write_cube(ys.sar, d / "sar")
        if ys.crop_labels is not None:
            p["crop_labels"] = write_labels(ys.crop_labels, d / "crop_labels")
            p["crop_truth"] = write_class_map(ys.crop_truth, d / "crop_truth")
        paths[year] = p
    return paths
