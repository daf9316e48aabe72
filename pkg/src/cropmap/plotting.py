"""Figures written to files (Agg backend): class maps, change bars and CPU ratios."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from .evaluation import CpuRow  # noqa: E402
from .landchange import ChangeReport  # noqa: E402
from .rastercube import NODATA, ClassMap  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_class_maps(maps: Mapping[str, ClassMap], path: str | Path, pixel_size_m: float = 10.0) -> Path:
    """Side-by-side class maps on a shared legend; axes in kilometres."""
    table: dict[int, str] = {}
    for m in maps.values():
        table.update(m.class_table)
    ids = sorted(table)
    cmap = ListedColormap(plt.get_cmap("tab10").colors[: max(len(ids), 1)])
    fig, axes = plt.subplots(1, len(maps), figsize=(4 * len(maps), 4), squeeze=False)
    for ax, (title, m) in zip(axes[0], maps.items()):
        idx = np.full(m.class_ids.shape, np.nan)
        for i, c in enumerate(ids):
            idx[m.class_ids == c] = i
        km = pixel_size_m / 1000.0
        ax.imshow(np.ma.masked_invalid(idx), cmap=cmap, vmin=-0.5, vmax=len(ids) - 0.5,
                  interpolation="nearest", extent=(0, m.width * km, m.height * km, 0))
        ax.set_title(title)
        ax.set_xlabel("km")
        ax.set_ylabel("km")
    handles = [plt.Rectangle((0, 0), 1, 1, color=cmap(i)) for i in range(len(ids))]
    fig.legend(handles, [table[c] for c in ids], loc="lower center", ncol=min(len(ids), 6), frameon=False)
    if any((m.class_ids == NODATA).any() for m in maps.values()):
        fig.text(0.99, 0.01, "blank = no data", ha="right", fontsize=8)
    fig.subplots_adjust(bottom=0.2)
    return _save(fig, path)


def plot_change(reports: Sequence[ChangeReport], path: str | Path, title: str = "") -> Path:
    labels = [f"{r.year_a}-{r.year_b}" for r in reports]
    x = np.arange(len(reports))
    fig, ax = plt.subplots(figsize=(1.6 * len(reports) + 2, 3.5))
    ax.bar(x - 0.2, [r.decrease_pct for r in reports], 0.4, label="decrease")
    ax.bar(x + 0.2, [r.increase_pct for r in reports], 0.4, label="increase")
    ax.set_xticks(x, labels)
    ax.set_ylabel("% of mapped area")
    ax.set_title(title or "Cropland change")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_cpu(rows: Sequence[CpuRow], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(1.4 * len(rows) + 2, 3.5))
    x = np.arange(len(rows))
    ax.bar(x, [r.ratio_mean for r in rows], yerr=[r.ratio_interval for r in rows], capsize=4)
    ax.axhline(1.0, color="0.4", lw=0.8, ls="--")
    ax.set_xticks(x, [r.name for r in rows], rotation=20, ha="right")
    ax.set_ylabel("relative CPU use")
    return _save(fig, path)
