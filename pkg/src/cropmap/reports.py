"""Delimited and plain-text tables in the layouts used for published results."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .ensemble import SelectionReport
from .evaluation import METRICS, CpuRow, EvaluationReport
from .landchange import ChangeReport, CoreCroplandMask

METRIC_LABELS = {"accuracy": "Accuracy", "macro_f1": "Macro F1", "weighted_f1": "Weighted F1"}


def pm(mean: float, std: float, digits: int = 3) -> str:
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


@dataclass
class Table:
    title: str
    columns: tuple[str, ...]
    rows: list[tuple[str, ...]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows(self.rows)
        return buf.getvalue()

    def to_text(self) -> str:
        widths = [max(len(str(c)), *(len(str(r[i])) for r in self.rows)) if self.rows else len(c)
                  for i, c in enumerate(self.columns)]
        line = "  ".join("-" * w for w in widths)
        fmt = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
        return "\n".join([self.title, line, fmt(self.columns), line, *(fmt(r) for r in self.rows), line]) + "\n"

    def write(self, directory: str | Path, stem: str) -> dict[str, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {"csv": d / f"{stem}.csv", "txt": d / f"{stem}.txt"}
        paths["csv"].write_text(self.to_csv())
        paths["txt"].write_text(self.to_text())
        return paths


def selection_table(reports: Mapping[str, SelectionReport]) -> Table:
    """Learner x metric rows, one column per input kind; chosen heads are starred."""
    inputs = list(reports)
    learners: list[str] = []
    for rep in reports.values():
        learners += [l for l in rep.learners if l not in learners]
    rows = []
    for learner in learners:
        for i, m in enumerate(METRICS):
            cells = []
            for name in inputs:
                rep = reports[name]
                if learner not in rep.learners or learner in rep.excluded:
                    cells.append("n/a")
                    continue
                cell = pm(rep.mean(learner, m), rep.std(learner, m))
                cells.append(cell + (" *" if learner in rep.chosen else ""))
            rows.append((learner if i == 0 else "", METRIC_LABELS[m], *cells))
    runs = sorted({r.runs for r in reports.values()})
    return Table(f"Single-head results (± std over {'/'.join(map(str, runs))} runs; * = selected)",
                 ("Method", "Metric", *inputs), rows)


def ensemble_table(results: Mapping[int, Mapping[str, EvaluationReport]], task: str = "landcover") -> Table:
    """Year x method rows with mean ± std of every metric."""
    rows = []
    for year in sorted(results):
        for i, (method, rep) in enumerate(results[year].items()):
            cells = [pm(*rep.aggregate()[m]) for m in METRICS]
            note = f" ({rep.n_failed} failed)" if rep.n_failed else ""
            rows.append((str(year) if i == 0 else "", method + note, *cells))
    return Table(f"Ensemble {task} classification (mean ± std over runs)",
                 ("Year", "Ensemble Method", *(f"{METRIC_LABELS[m]} (mean ± std)" for m in METRICS)), rows)


def transfer_table(results: Mapping[str, Mapping[tuple[int, int], EvaluationReport]], task: str = "landcover") -> Table:
    rows = []
    for method, pairs in results.items():
        last_train = None
        for j, ((a, b), rep) in enumerate(sorted(pairs.items())):
            cells = [pm(*rep.aggregate()[m]) for m in METRICS]
            rows.append((method if j == 0 else "", str(a) if a != last_train else "", str(b), *cells))
            last_train = a
    return Table(f"Cross-year {task} classification (± std over validation subsets)",
                 ("Method", "Training year", "Prediction year", *(f"{METRIC_LABELS[m]} (mean ± std)" for m in METRICS)),
                 rows)


def cpu_table(rows: Sequence[CpuRow]) -> Table:
    body = []
    for r in rows:
        body.append((r.name, "1" if r.ratio_mean == 1.0 and r.ratio_interval == 0 else f"{r.ratio_mean:.2f}±{r.ratio_interval:.2f}"))
    n = rows[0].n_runs if rows else 0
    return Table(f"Relative CPU use (interval over {n} runs)", ("Ensemble method", "Relative CPU use"), body)


def throughput_table(rows: Sequence[tuple[str, int, float]]) -> Table:
    """``(label, pixels, seconds)`` rows with pixels per second."""
    body = [(label, str(px), f"{sec:.3f}", f"{px / sec:.0f}" if sec > 0 else "inf") for label, px, sec in rows]
    return Table("Throughput", ("Configuration", "Pixels", "Seconds", "Pixels/s"), body)


def change_table(reports: Mapping[str, Sequence[ChangeReport]]) -> Table:
    rows = []
    for name, reps in reports.items():
        for i, r in enumerate(reps):
            rows.append((name if i == 0 else "", f"{r.year_a}--{r.year_b}",
                         f"{r.decrease_pct:.1f}", f"{r.increase_pct:.1f}", f"{r.aggregate_pct:.1f}"))
    return Table("Cropland change between years (% of mapped area)",
                 ("Dataset", "Year Comparison", "Decrease (%)", "Increase (%)", "Aggregate Change (%)"), rows)


def core_table(masks: Mapping[str, CoreCroplandMask]) -> Table:
    rows = [(name, f"{m.percent_of_area:.1f}") for name, m in masks.items()]
    return Table("Core cropland (% of area)", ("Method", "Percent cropland"), rows)


def write_json(path: str | Path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_default) + "\n")
    return path


def _default(obj):
    import numpy as np

    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, tuple)):
        return list(obj)
    if hasattr(obj, "to_json"):
        return obj.to_json()
    raise TypeError(f"not JSON serializable: {type(obj)}")
