"""Small hand-built feature rasters and label sets for evaluation tests."""

from __future__ import annotations

import numpy as np

from cropmap.rastercube import FeatureRaster, rasterize_labels


def block_dataset(n_per_class=10, n_classes=3, block=3, n_features=4, spread=0.2, seed=0, year=2018,
                  overlap=0.0):
    """Square polygons on a regular grid, class-dependent feature means plus noise.

    ``overlap`` shifts every class mean toward the global mean so classes can be made confusable.
    """
    rng = np.random.default_rng(seed)
    n = n_per_class * n_classes
    per_row = int(np.ceil(np.sqrt(n)))
    side = per_row * (block + 1)
    polys = []
    for i in range(n):
        r, c = divmod(i, per_row)
        x0, y0 = c * (block + 1), r * (block + 1)
        ring = [(x0, y0), (x0 + block, y0), (x0 + block, y0 + block), (x0, y0 + block)]
        polys.append((i + 1, i % n_classes + 1, ring))
    table = {k + 1: f"class{k + 1}" for k in range(n_classes)}
    labels = rasterize_labels(polys, (side, side), table, year=year)
    means = np.random.default_rng(1234).normal(0, 3, size=(n_classes, n_features)) * (1 - overlap)
    values = rng.normal(0, spread, size=(n_features, side, side))
    rows, cols, cls, _ = labels.arrays()
    values[:, rows, cols] += means[cls - 1].T
    fr = FeatureRaster(side, side, tuple(f"f{i}" for i in range(n_features)), values, "embedding", year)
    return fr, labels


ACCEPTANCE_LINES: list[str] = []


def verdict(number: int, title: str, ok: bool, detail: str) -> bool:
    """Record and print one pass/fail line for an acceptance criterion."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
