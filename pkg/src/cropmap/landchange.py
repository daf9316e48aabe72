"""Core-cropland masks, cropland change between years, and crop-type masking."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError
from .rastercube import NODATA, ClassMap, ClassProbabilityMap, argmax_lowest

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoreCroplandMask:
    mask: np.ndarray
    years: tuple[int, ...]
    percent_of_area: float

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    def as_class_map(self) -> ClassMap:
        """0/1 raster for storage in the class-map format."""
        year = self.years[-1] if self.years else 0
        return ClassMap(self.width, self.height, self.mask.astype(np.int32), {0: "other", 1: "core_cropland"}, year)


@dataclass(frozen=True)
class ChangeReport:
    year_a: int
    year_b: int
    decrease_pct: float
    increase_pct: float
    aggregate_pct: float
    transitions: dict[str, int] = field(default_factory=dict)
    mapped_pixels: int = 0

    def to_json(self) -> dict:
        return {
            "years": [self.year_a, self.year_b],
            "decrease_pct": self.decrease_pct,
            "increase_pct": self.increase_pct,
            "aggregate_pct": self.aggregate_pct,
            "transitions": self.transitions,
            "mapped_pixels": self.mapped_pixels,
        }


def _same_grid(maps) -> None:
    grids = {(m.width, m.height) for m in maps}
    if len(grids) > 1:
        raise ContractError(f"maps differ in grid: {sorted(grids)}")


def core_cropland(maps: Sequence[ClassMap], cropland_class_id: int) -> CoreCroplandMask:
    """Pixels mapped as cropland in every map."""
    if not maps:
        raise ContractError("core cropland needs at least one map")
    _same_grid(maps)
    mask = np.ones((maps[0].height, maps[0].width), dtype=bool)
    for m in maps:
        mask &= m.class_ids == cropland_class_id
    pct = 100.0 * int(mask.sum()) / mask.size
    return CoreCroplandMask(mask, tuple(m.year for m in maps), pct)


def cropland_change(map_a: ClassMap, map_b: ClassMap, cropland_class_id: int) -> ChangeReport:
    """Cropland lost and gained from ``map_a`` to ``map_b`` as percentages of the mapped area.

    The area counts pixels mapped (not NODATA) in both years; without NODATA it is the full grid.
    """
    _same_grid([map_a, map_b])
    a, b = map_a.class_ids, map_b.class_ids
    mapped = (a != NODATA) & (b != NODATA)
    area = int(mapped.sum())
    ca = (a == cropland_class_id) & mapped
    cb = (b == cropland_class_id) & mapped
    counts = {
        "crop_to_crop": int((ca & cb).sum()),
        "crop_to_other": int((ca & ~cb).sum()),
        "other_to_crop": int((~ca & cb & mapped).sum()),
        "other_to_other": int((~ca & ~cb & mapped).sum()),
    }
    if area == 0:
        LOGGER.warning("no pixel is mapped in both years; change is reported as 0")
        dec = inc = 0.0
    else:
        dec = 100.0 * counts["crop_to_other"] / area
        inc = 100.0 * counts["other_to_crop"] / area
    return ChangeReport(map_a.year, map_b.year, dec, inc, dec + inc, counts, area)


def apply_crop_mask(prob_map: ClassProbabilityMap, mask: CoreCroplandMask) -> ClassMap:
    """Crop-type argmax inside the mask, NODATA elsewhere."""
    if (prob_map.width, prob_map.height) != (mask.width, mask.height):
        raise ContractError("probability map and mask differ in grid")
    labels, _ = argmax_lowest(prob_map.probs, prob_map.class_ids, axis=0)
    out = np.where(mask.mask, labels, NODATA).astype(np.int32)
    return ClassMap(prob_map.width, prob_map.height, out, prob_map.class_table, prob_map.year)
