"""Batch command line: ``cropmap <command> CONFIG [--output DIR]``.

Commands: synth, features, select, train, map, report. Every output directory
receives the resolved config and SHA-256 hashes of the inputs it read.
Exit codes: 0 success, 2 config error, 3 data or contract error, 4 partial.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from itertools import permutations
from pathlib import Path

import yaml

from .config import PipelineConfig, load_config, write_provenance
from .embeddings import EmbeddingRaster, ingest_embeddings, write_embeddings
from .ensemble import (
    EnsembleModel,
    fit_ensemble,
    mean_probability,
    predict_ensemble,
    select_heads,
)
from .errors import ConfigError, CropmapError
from .evaluation import (
    FULL_MAP_FRACTIONS,
    SplitSpec,
    _select,
    evaluate_multi_run,
    labeled_samples,
    measure_cpu,
    split_polygons,
    transfer_evaluate,
)
from .indices import IndexSpec
from .landchange import CoreCroplandMask, apply_crop_mask, core_cropland, cropland_change
from .learners.base import deserialize_model, serialize_model
from .rastercube import (
    ClassMap,
    LabelEntry,
    LabelSet,
    merge_classes,
    read_class_map,
    read_cube,
    read_feature_raster,
    read_labels,
    write_class_map,
    write_feature_raster,
    write_probability_map,
)
from .stm import build_raw_features, build_stm_features
from .synthgen import default_scene_spec, generate_scene, write_scene
from . import plotting, reports

LOGGER = logging.getLogger("cropmap")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PARTIAL = 0, 2, 3, 4


# --------------------------------------------------------------------------- input helpers


def _years(cfg: PipelineConfig) -> list[int]:
    if not cfg.years:
        raise ConfigError("config lists no years")
    return sorted(cfg.years)


def _require(cfg: PipelineConfig, year: int, key: str) -> Path:
    p = cfg.path(year, key)
    if p is None:
        raise ConfigError(f"year {year}: no {key!r} path configured")
    if not p.exists():
        raise ConfigError(f"year {year}: {key} path {p} does not exist")
    return p


def _features_path(cfg: PipelineConfig, year: int) -> Path:
    p = cfg.path(year, "features") or cfg.output_dir / "features" / str(year)
    if not p.exists():
        raise ConfigError(f"no features for {year} at {p}; run the features command first")
    return p


def _load_features(cfg: PipelineConfig, year: int):
    return read_feature_raster(_features_path(cfg, year))


def _core_mask(cfg: PipelineConfig) -> CoreCroplandMask | None:
    if cfg.task != "croptype":
        return None
    if cfg.core_mask is None:
        raise ConfigError("croptype task needs core_mask (a 0/1 class map from a landcover run)")
    p = cfg.resolve(cfg.core_mask)
    if not p.exists():
        raise ConfigError(f"core mask {p} does not exist")
    cm = read_class_map(p)
    mask = cm.class_ids == 1
    return CoreCroplandMask(mask, (cm.year,), 100.0 * mask.sum() / mask.size)


def _load_labels(cfg: PipelineConfig, year: int) -> LabelSet:
    labels = read_labels(_require(cfg, year, "labels"))
    if cfg.merge:
        labels = merge_classes(labels, cfg.merge)
    mask = _core_mask(cfg)
    if mask is not None:
        # crop types are learned only from labeled pixels inside the core cropland
        entries = []
        for e in labels.entries:
            px = e.pixels[mask.mask[e.pixels[:, 0], e.pixels[:, 1]]]
            if len(px):
                entries.append(LabelEntry(e.polygon_id, e.class_id, px))
        labels = labels.with_entries(entries)
    return labels


def _heads(cfg: PipelineConfig):
    names = cfg.heads
    if names is None:
        sel = cfg.output_dir / "selection" / "selection.json"
        if not sel.exists():
            raise ConfigError("no heads configured and no selection report found; set heads or run select")
        names = json.loads(sel.read_text())["chosen"]
    if not 1 <= len(names) <= 2:
        raise ConfigError(f"an ensemble takes one or two heads, got {names}")
    return cfg.head_configs(names)


def _input_files(cfg: PipelineConfig, keys) -> list[Path]:
    out = []
    for y in sorted(cfg.years):
        for k in keys:
            p = cfg.path(y, k)
            if p is not None and p.exists():
                out.append(p)
    return out


# --------------------------------------------------------------------------- commands


def cmd_synth(cfg: PipelineConfig) -> int:
    overrides = dict(cfg.synth)
    for key in ("years", "drift", "class_shares", "crop_shares"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    if "years" in overrides and "drift" not in overrides:
        overrides["drift"] = (0.0,) * len(overrides["years"])
    if overrides.pop("crop_classes", True) is False:
        overrides["crop_classes"] = ()
    try:
        spec = default_scene_spec(seed=cfg.seed, **overrides)
    except TypeError as exc:
        raise ConfigError(f"bad synth parameters: {exc}") from None
    scene = generate_scene(spec)
    out = cfg.output_dir / "scene"
    paths = write_scene(scene, out)
    years = {y: {"cube": str(p["optical"]), "sar": str(p["sar"]), "embeddings": str(p["embeddings"]),
                 "labels": str(p["labels"])} for y, p in paths.items()}
    (out / "pipeline.yaml").write_text(yaml.safe_dump({"years": years, "input": "embedding",
                                                       "output": str(cfg.output_dir)}, sort_keys=True))
    write_provenance(out, cfg, [])
    LOGGER.info("scene written to %s (estimated prototype confusion %.2e)", out, scene.bayes_overlap)
    return EXIT_OK


def build_features(cfg: PipelineConfig, year: int):
    if cfg.input == "embedding":
        path = _require(cfg, year, "embeddings")
        if cfg.embedding_dim is None:
            return ingest_embeddings(path, read_feature_raster(path).n_features)
        return ingest_embeddings(path, cfg.embedding_dim)
    cube = read_cube(_require(cfg, year, "cube"))
    sar = read_cube(_require(cfg, year, "sar")) if cfg.path(year, "sar") is not None else None
    if cfg.input == "stm":
        return build_stm_features(cube, cfg.window_specs(), cfg.stat_spec(), cfg.tc_spec(), sar,
                                  cfg.bands(), cfg.target_count, cfg.n_workers)
    indices = None if cfg.indices is None else [IndexSpec(n, cfg.bands()) for n in cfg.indices]
    return build_raw_features(cube, sar, indices, cfg.target_count, cfg.n_workers)


def cmd_features(cfg: PipelineConfig) -> int:
    out = cfg.output_dir / "features"
    for year in _years(cfg):
        fr = build_features(cfg, year)
        if isinstance(fr, EmbeddingRaster):
            write_embeddings(fr, out / str(year))
        else:
            write_feature_raster(fr, out / str(year))
        LOGGER.info("%d: %d %s features", year, fr.n_features, fr.source)
    write_provenance(out, cfg, _input_files(cfg, ("cube", "sar", "embeddings")))
    return EXIT_OK


def cmd_select(cfg: PipelineConfig) -> int:
    year = cfg.selection_year if cfg.selection_year is not None else _years(cfg)[0]
    fr, labels = _load_features(cfg, year), _load_labels(cfg, year)
    rep = select_heads(fr, labels, cfg.head_configs(cfg.learners), cfg.selection_runs, cfg.seed, cfg.fractions)
    out = cfg.output_dir / "selection"
    reports.write_json(out / "selection.json", rep.to_json())
    reports.selection_table({cfg.input: rep}).write(out, "selection")
    write_provenance(out, cfg, [_features_path(cfg, year), _require(cfg, year, "labels")])
    LOGGER.info("selected heads %s", rep.chosen)
    return EXIT_PARTIAL if rep.excluded else EXIT_OK


def _map_split(labels: LabelSet, seed: int):
    return split_polygons(labels, SplitSpec(FULL_MAP_FRACTIONS, seed))


def train_year(cfg: PipelineConfig, year: int) -> list[EnsembleModel]:
    """``map_runs`` ensembles on all labeled data with a (0.9, 0.1) split; run r uses seed ``seed + r``."""
    fr, labels = _load_features(cfg, year), _load_labels(cfg, year)
    samples = labeled_samples(fr, labels)
    heads = _heads(cfg)
    models = []
    for r in range(cfg.map_runs):
        seed = cfg.seed + r
        tr_l, va_l = _map_split(labels, seed)
        models.append(fit_ensemble(_select(samples, tr_l), heads, seed, _select(samples, va_l), labels.class_table))
    return models


def _save_models(models: list[EnsembleModel], directory: Path) -> None:
    for r, m in enumerate(models):
        d = directory / f"run{r}"
        d.mkdir(parents=True, exist_ok=True)
        for i, member in enumerate(m.members):
            (d / f"member{i}.model").write_bytes(serialize_model(member))
        (d / "ensemble.json").write_text(json.dumps(
            {"members": len(m.members), "class_table": {str(k): v for k, v in m.class_table.items()}},
            indent=2, sort_keys=True) + "\n")


def _load_models(directory: Path) -> list[EnsembleModel]:
    models = []
    for d in sorted(directory.glob("run*"), key=lambda p: int(p.name[3:])):
        meta = json.loads((d / "ensemble.json").read_text())
        members = [deserialize_model((d / f"member{i}.model").read_bytes()) for i in range(meta["members"])]
        models.append(EnsembleModel(tuple(members), {int(k): v for k, v in meta["class_table"].items()}))
    return models


def cmd_train(cfg: PipelineConfig) -> int:
    for year in _years(cfg):
        out = cfg.output_dir / "models" / str(year)
        _save_models(train_year(cfg, year), out)
        write_provenance(out, cfg, [_features_path(cfg, year), _require(cfg, year, "labels")])
    return EXIT_OK


def cmd_map(cfg: PipelineConfig) -> int:
    maps: dict[int, ClassMap] = {}
    mask = _core_mask(cfg)
    for year in _years(cfg):
        fr = _load_features(cfg, year)
        model_dir = cfg.output_dir / "models" / str(year)
        models = _load_models(model_dir) if model_dir.exists() else train_year(cfg, year)
        probs = [predict_ensemble(m, fr) for m in models]
        mean = mean_probability(probs) if len(probs) > 1 else probs[0]
        cm = apply_crop_mask(mean, mask) if mask is not None else mean.argmax()
        out = cfg.output_dir / "maps" / str(year)
        write_class_map(cm, out / "classmap")
        write_probability_map(mean, out / "probs")
        reports.write_json(out / "map.json", {"runs": len(models), "aggregated": len(models) > 1,
                                              "ties": mean.ties, "task": cfg.task})
        write_provenance(out, cfg, [_features_path(cfg, year)])
        maps[year] = cm
    root = cfg.output_dir / "maps"
    if cfg.task == "landcover":
        core = core_cropland(list(maps.values()), cfg.cropland_class)
        write_class_map(core.as_class_map(), root / "core_cropland")
        reports.write_json(root / "core_cropland.json", {"years": list(core.years), "percent_of_area": core.percent_of_area})
    plotting.plot_class_maps({str(y): m for y, m in maps.items()}, root / f"{cfg.task}_maps.png")
    return EXIT_OK


def cmd_report(cfg: PipelineConfig) -> int:
    out = cfg.output_dir / "report"
    years = _years(cfg)
    partial = False
    sections = set(cfg.report)
    unknown = sections - {"evaluation", "transfer", "change", "cpu"}
    if unknown:
        raise ConfigError(f"unknown report sections {sorted(unknown)}")
    heads = _heads(cfg) if sections & {"evaluation", "transfer"} else None
    inputs: list[Path] = []
    if "evaluation" in sections:
        results = {}
        for y in years:
            fr, labels = _load_features(cfg, y), _load_labels(cfg, y)
            rep = evaluate_multi_run(fr, labels, heads, cfg.n_runs, cfg.seed, cfg.fractions, cfg.n_workers)
            partial |= rep.n_failed > 0
            results[y] = {cfg.input: rep}
            reports.write_json(out / f"evaluation_{y}.json", rep.to_json())
            inputs.append(_features_path(cfg, y))
        reports.ensemble_table(results, cfg.task).write(out, "evaluation")
    if "transfer" in sections:
        pairs = {}
        data = {y: (_load_features(cfg, y), _load_labels(cfg, y)) for y in years}
        for a, b in [(y, y) for y in years] + list(permutations(years, 2)):
            rep = transfer_evaluate(*data[a], *data[b], heads, cfg.transfer_runs, cfg.seed, n_workers=cfg.n_workers)
            partial |= rep.n_failed > 0
            pairs[(a, b)] = rep
            reports.write_json(out / f"transfer_{a}_{b}.json", rep.to_json())
        reports.transfer_table({cfg.input: pairs}, cfg.task).write(out, "transfer")
    if "change" in sections:
        maps = {}
        for y in years:
            p = cfg.output_dir / "maps" / str(y) / "classmap"
            if not p.exists():
                raise ConfigError(f"no class map for {y} at {p}; run the map command first")
            maps[y] = read_class_map(p)
            inputs.append(p)
        changes = [cropland_change(maps[a], maps[b], cfg.cropland_class) for i, a in enumerate(years) for b in years[i + 1:]]
        core = core_cropland([maps[y] for y in years], cfg.cropland_class)
        reports.change_table({cfg.input: changes}).write(out, "change")
        reports.core_table({cfg.input: core}).write(out, "core_cropland")
        reports.write_json(out / "change.json", {"pairs": [c.to_json() for c in changes],
                                                 "core_percent_of_area": core.percent_of_area})
        if changes:
            plotting.plot_change(changes, out / "change.png", f"Cropland change ({cfg.input})")
    if "cpu" in sections:
        rows = _cpu_rows(cfg)
        reports.cpu_table(rows).write(out, "cpu")
        reports.write_json(out / "cpu.json", [r.__dict__ for r in rows])
        plotting.plot_cpu(rows, out / "cpu.png")
    write_provenance(out, cfg, inputs)
    return EXIT_PARTIAL if partial else EXIT_OK


def _cpu_rows(cfg: PipelineConfig):
    """Each ``cpu`` entry: name, features path, labels path, heads. The first entry is the baseline."""
    if len(cfg.cpu) < 2:
        raise ConfigError("the cpu report needs at least two entries")
    workloads = []
    for entry in cfg.cpu:
        try:
            fr = read_feature_raster(cfg.resolve(entry["features"]))
            labels = read_labels(cfg.resolve(entry["labels"]))
            heads = cfg.head_configs(entry["heads"])
        except KeyError as exc:
            raise ConfigError(f"cpu entry {entry!r} lacks {exc}") from None
        samples = labeled_samples(fr, labels)

        def work(fr=fr, labels=labels, samples=samples, heads=heads):
            tr_l, va_l = _map_split(labels, cfg.seed)
            model = fit_ensemble(_select(samples, tr_l), heads, cfg.seed, _select(samples, va_l))
            predict_ensemble(model, fr)

        workloads.append((entry["name"], work))
    return measure_cpu(workloads, n_runs=cfg.cpu_runs)


COMMANDS = {
    "synth": cmd_synth,
    "features": cmd_features,
    "select": cmd_select,
    "train": cmd_train,
    "map": cmd_map,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cropmap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).splitlines()[0])
        p.add_argument("config", help="YAML or JSON run configuration")
        p.add_argument("--output", help="override the configured output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.output)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        LOGGER.error("config error: %s", exc)
        return EXIT_CONFIG
    except CropmapError as exc:
        LOGGER.error("%s: %s", type(exc).__name__, exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
